use serde::{Deserialize, Serialize};

use crate::env::{Action, ActionType};
use crate::error::{Error, Result};

pub type TokenId = usize;

pub const N_SLOTS: usize = 3;
/// Element slots addressable by the policy.
pub const E_MAX: usize = 24;

/// `[type, arg1, arg2]`, PAD-filled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionTokenSequence(pub [TokenId; N_SLOTS]);

impl ActionTokenSequence {
    pub fn tokens(&self) -> &[TokenId] {
        &self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenClass {
    Pad,
    Type(ActionType),
    Element(usize),
    App(usize),
    Text(usize),
}

/// Which tokens a slot may emit given the tokens already chosen.
///
/// `None` means the slot is structurally PAD: it is not sampled and contributes
/// nothing to the action log-probability.
pub trait ActionSpace {
    fn vocab_size(&self) -> usize;
    fn n_slots(&self) -> usize;
    fn support(&self, slot: usize, prefix: &[TokenId]) -> Option<&[TokenId]>;
}

/// Every slot ranges over the whole vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct FullSpace {
    all: Vec<TokenId>,
    n_slots: usize,
}

impl FullSpace {
    pub fn new(vocab_size: usize, n_slots: usize) -> Self {
        FullSpace {
            all: (0..vocab_size).collect(),
            n_slots,
        }
    }
}

impl ActionSpace for FullSpace {
    fn vocab_size(&self) -> usize {
        self.all.len()
    }

    fn n_slots(&self) -> usize {
        self.n_slots
    }

    fn support(&self, _slot: usize, _prefix: &[TokenId]) -> Option<&[TokenId]> {
        Some(&self.all)
    }
}

/// Token inventory for one world: PAD, the 11 action types, element indices,
/// app names and the text lexicon, in that order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    app_names: Vec<String>,
    lexicon: Vec<String>,
    types: Vec<TokenId>,
    elements: Vec<TokenId>,
    apps: Vec<TokenId>,
    texts: Vec<TokenId>,
    pad_or_text: Vec<TokenId>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    tokens: Vec<String>,
    app_names: Vec<String>,
    lexicon: Vec<String>,
}

impl From<VocabRepr> for Vocabulary {
    fn from(r: VocabRepr) -> Self {
        Vocabulary::new(r.app_names, r.lexicon)
    }
}

impl From<Vocabulary> for VocabRepr {
    fn from(v: Vocabulary) -> Self {
        VocabRepr {
            tokens: v.tokens,
            app_names: v.app_names,
            lexicon: v.lexicon,
        }
    }
}

const PAD: TokenId = 0;
const TYPE_BASE: TokenId = 1;
const ELEM_BASE: TokenId = TYPE_BASE + 11;

impl Vocabulary {
    pub fn new(app_names: Vec<String>, lexicon: Vec<String>) -> Self {
        let mut tokens = vec!["PAD".to_string()];
        tokens.extend(ActionType::ALL.iter().map(|t| t.name().to_string()));
        tokens.extend((0..E_MAX).map(|i| format!("ELEM_{i}")));
        tokens.extend(app_names.iter().map(|a| format!("APP_{a}")));
        tokens.extend(lexicon.iter().map(|w| format!("TEXT_{w}")));
        let app_base = ELEM_BASE + E_MAX;
        let text_base = app_base + app_names.len();
        let texts: Vec<TokenId> = (text_base..text_base + lexicon.len()).collect();
        let mut pad_or_text = vec![PAD];
        pad_or_text.extend(&texts);
        Vocabulary {
            types: (TYPE_BASE..ELEM_BASE).collect(),
            elements: (ELEM_BASE..app_base).collect(),
            apps: (app_base..text_base).collect(),
            texts,
            pad_or_text,
            tokens,
            app_names,
            lexicon,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token_name(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn pad(&self) -> TokenId {
        PAD
    }

    pub fn type_token(&self, t: ActionType) -> TokenId {
        TYPE_BASE + t.index()
    }

    pub fn element_token(&self, i: usize) -> TokenId {
        ELEM_BASE + i
    }

    pub fn app_token(&self, app: usize) -> TokenId {
        self.app_base() + app
    }

    pub fn text_token(&self, word: usize) -> TokenId {
        self.text_base() + word
    }

    pub fn app_tokens(&self) -> &[TokenId] {
        &self.apps
    }

    pub fn app_names(&self) -> &[String] {
        &self.app_names
    }

    pub fn lexicon(&self) -> &[String] {
        &self.lexicon
    }

    pub fn app_index(&self, name: &str) -> Option<usize> {
        self.app_names.iter().position(|a| a.eq_ignore_ascii_case(name))
    }

    pub fn word_index(&self, word: &str) -> Option<usize> {
        self.lexicon.iter().position(|w| w == word)
    }

    fn app_base(&self) -> TokenId {
        ELEM_BASE + E_MAX
    }

    fn text_base(&self) -> TokenId {
        self.app_base() + self.app_names.len()
    }

    pub fn classify(&self, id: TokenId) -> Option<TokenClass> {
        if id == PAD {
            Some(TokenClass::Pad)
        } else if id < ELEM_BASE {
            Some(TokenClass::Type(ActionType::ALL[id - TYPE_BASE]))
        } else if id < self.app_base() {
            Some(TokenClass::Element(id - ELEM_BASE))
        } else if id < self.text_base() {
            Some(TokenClass::App(id - self.app_base()))
        } else if id < self.tokens.len() {
            Some(TokenClass::Text(id - self.text_base()))
        } else {
            None
        }
    }

    pub fn tokenize(&self, action: &Action) -> Result<ActionTokenSequence> {
        let ty = self.type_token(action.action_type());
        let pad = PAD;
        let seq = match action {
            Action::OpenApp(name) => {
                let app = self
                    .app_index(name)
                    .filter(|&i| self.app_names[i] == *name)
                    .ok_or_else(|| Error::Encoding(format!("unknown app {name:?}")))?;
                [ty, self.app_token(app), pad]
            }
            Action::InputText(text) => {
                let ws: Vec<&str> = text.split(' ').collect();
                if ws.is_empty() || ws.len() > 2 {
                    return Err(Error::Encoding(format!("text {text:?} must be one or two words")));
                }
                let mut ids = [pad; 2];
                for (slot, w) in ws.iter().enumerate() {
                    let idx = self
                        .word_index(w)
                        .ok_or_else(|| Error::Encoding(format!("out-of-vocabulary text {w:?}")))?;
                    ids[slot] = self.text_token(idx);
                }
                [ty, ids[0], ids[1]]
            }
            Action::Click(i) | Action::LongPress(i) => {
                if *i >= E_MAX {
                    return Err(Error::Encoding(format!("element {i} beyond E_max {E_MAX}")));
                }
                [ty, self.element_token(*i), pad]
            }
            _ => [ty, pad, pad],
        };
        Ok(ActionTokenSequence(seq))
    }

    pub fn detokenize(&self, seq: &ActionTokenSequence) -> Result<Action> {
        let bad = || Error::Encoding(format!("malformed token sequence {:?}", seq.0));
        let [t0, t1, t2] = seq.0;
        let ty = match self.classify(t0) {
            Some(TokenClass::Type(t)) => t,
            _ => return Err(bad()),
        };
        let (c1, c2) = (self.classify(t1).ok_or_else(bad)?, self.classify(t2).ok_or_else(bad)?);
        let action = match (ty, c1, c2) {
            (ActionType::OpenApp, TokenClass::App(a), TokenClass::Pad) => {
                Action::OpenApp(self.app_names[a].clone())
            }
            (ActionType::InputText, TokenClass::Text(w), TokenClass::Pad) => {
                Action::InputText(self.lexicon[w].clone())
            }
            (ActionType::InputText, TokenClass::Text(w), TokenClass::Text(v)) => {
                Action::InputText(format!("{} {}", self.lexicon[w], self.lexicon[v]))
            }
            (ActionType::Click, TokenClass::Element(i), TokenClass::Pad) => Action::Click(i),
            (ActionType::LongPress, TokenClass::Element(i), TokenClass::Pad) => Action::LongPress(i),
            (t, TokenClass::Pad, TokenClass::Pad) => Action::from_parts(t, None).map_err(|_| bad())?,
            _ => return Err(bad()),
        };
        Ok(action)
    }
}

impl ActionSpace for Vocabulary {
    fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    fn n_slots(&self) -> usize {
        N_SLOTS
    }

    fn support(&self, slot: usize, prefix: &[TokenId]) -> Option<&[TokenId]> {
        if slot == 0 {
            return Some(&self.types);
        }
        let ty = match self.classify(prefix[0]) {
            Some(TokenClass::Type(t)) => t,
            _ => return None,
        };
        match (slot, ty) {
            (1, ActionType::OpenApp) => Some(&self.apps),
            (1, ActionType::InputText) => Some(&self.texts),
            (1, ActionType::Click | ActionType::LongPress) => Some(&self.elements),
            (2, ActionType::InputText) => Some(&self.pad_or_text),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab() -> Vocabulary {
        Vocabulary::new(
            vec!["Vexo".into(), "Kalu".into(), "Mipo".into()],
            vec!["alice".into(), "bob".into(), "tokyo".into()],
        )
    }

    #[test]
    fn click_and_scroll_sequences() {
        let v = vocab();
        let click = v.tokenize(&Action::Click(5)).unwrap();
        assert_eq!(
            click.0,
            [v.type_token(ActionType::Click), v.element_token(5), v.pad()]
        );
        assert_eq!(v.token_name(click.0[1]), Some("ELEM_5"));
        let scroll = v.tokenize(&Action::ScrollUp).unwrap();
        assert_eq!(scroll.0, [v.type_token(ActionType::ScrollUp), v.pad(), v.pad()]);
    }

    #[test]
    fn out_of_vocabulary_text_is_an_encoding_error() {
        let v = vocab();
        for bad in ["zebra", "alice bob tokyo", "Alice", "alice  bob", ""] {
            assert!(
                matches!(v.tokenize(&Action::InputText(bad.into())), Err(Error::Encoding(_))),
                "{bad:?}"
            );
        }
        assert!(v.tokenize(&Action::OpenApp("Nope".into())).is_err());
        assert!(v.tokenize(&Action::Click(E_MAX)).is_err());
    }

    #[test]
    fn classify_covers_every_token() {
        let v = vocab();
        assert_eq!(v.len(), 1 + 11 + E_MAX + 3 + 3);
        assert_eq!(v.classify(0), Some(TokenClass::Pad));
        assert_eq!(v.classify(v.app_token(2)), Some(TokenClass::App(2)));
        assert_eq!(v.classify(v.text_token(1)), Some(TokenClass::Text(1)));
        assert_eq!(v.classify(v.len()), None);
    }

    #[test]
    fn supports_follow_the_action_type() {
        let v = vocab();
        let click = v.type_token(ActionType::Click);
        let input = v.type_token(ActionType::InputText);
        assert_eq!(v.support(1, &[click]).unwrap().len(), E_MAX);
        assert!(v.support(2, &[click, v.element_token(0)]).is_none());
        assert_eq!(v.support(2, &[input, v.text_token(0)]).unwrap()[0], v.pad());
        assert!(v.support(1, &[v.type_token(ActionType::Wait)]).is_none());
    }

    #[test]
    fn serde_keeps_layout() {
        let v = vocab();
        let back: Vocabulary = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        assert_eq!(back, v);
    }

    fn any_action() -> impl Strategy<Value = Action> {
        let words = prop::sample::select(vec!["alice", "bob", "tokyo"]);
        prop_oneof![
            prop::sample::select(vec!["Vexo", "Kalu", "Mipo"]).prop_map(|s| Action::OpenApp(s.into())),
            (words.clone(), prop::option::of(words)).prop_map(|(a, b)| Action::InputText(match b {
                Some(b) => format!("{a} {b}"),
                None => a.to_string(),
            })),
            (0..E_MAX).prop_map(Action::Click),
            (0..E_MAX).prop_map(Action::LongPress),
            prop::sample::select(ActionType::ALL[4..].to_vec())
                .prop_map(|t| Action::from_parts(t, None).unwrap()),
        ]
    }

    proptest! {
        #[test]
        fn tokenize_round_trips(a in any_action()) {
            let v = vocab();
            let seq = v.tokenize(&a).unwrap();
            prop_assert_eq!(v.detokenize(&seq).unwrap(), a);
            // PAD only trails
            let first_pad = seq.0.iter().position(|&t| t == v.pad()).unwrap_or(N_SLOTS);
            prop_assert!(seq.0[first_pad..].iter().all(|&t| t == v.pad()));
        }
    }
}
