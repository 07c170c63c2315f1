use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ElementKind {
    Button,
    TextField,
    ListItem,
    Toggle,
    Label,
}

impl ElementKind {
    pub const ALL: [ElementKind; 5] = [
        ElementKind::Button,
        ElementKind::TextField,
        ElementKind::ListItem,
        ElementKind::Toggle,
        ElementKind::Label,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UiElement {
    pub element_id: usize,
    pub kind: ElementKind,
    pub label: String,
    /// Text of a text field (possibly empty) or `on`/`off` for a toggle.
    pub state: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreenSpec {
    pub screen_id: usize,
    pub title: String,
    pub elements: Vec<UiElement>,
    /// Clicking `element_id` navigates to the mapped screen.
    pub edges: BTreeMap<usize, usize>,
}

/// Demonstration apps (`A`) and online apps (`B`) never share names.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    A,
    B,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppSpec {
    pub app_name: String,
    pub category: String,
    pub family: Family,
    pub screens: Vec<ScreenSpec>,
    pub home_screen: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard];

    /// Tier of a task from the length of its shortest solution.
    pub fn from_optimal_len(len: usize) -> Self {
        match len {
            0..=4 => Difficulty::Easy,
            5..=8 => Difficulty::Medium,
            _ => Difficulty::Hard,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        }
    }
}

/// Success condition: the agent is on `screen` of `app`, and if `element` is set,
/// that element's state equals `required_state`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetPredicate {
    pub app: usize,
    pub screen: usize,
    pub element: Option<usize>,
    pub required_state: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Navigate,
    Toggle,
    InputText,
    ReplaceText,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    pub goal_text: String,
    pub kind: TaskKind,
    pub family: Family,
    pub target: TargetPredicate,
    pub horizon: usize,
    pub optimal_len: usize,
    pub difficulty: Difficulty,
    pub category: String,
}

impl Task {
    pub fn requires_long_press(&self) -> bool {
        self.kind == TaskKind::ReplaceText
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionType {
    OpenApp,
    InputText,
    Click,
    LongPress,
    Wait,
    ScrollUp,
    ScrollDown,
    ScrollLeft,
    ScrollRight,
    NavigateHome,
    NavigateBack,
}

impl ActionType {
    pub const ALL: [ActionType; 11] = [
        ActionType::OpenApp,
        ActionType::InputText,
        ActionType::Click,
        ActionType::LongPress,
        ActionType::Wait,
        ActionType::ScrollUp,
        ActionType::ScrollDown,
        ActionType::ScrollLeft,
        ActionType::ScrollRight,
        ActionType::NavigateHome,
        ActionType::NavigateBack,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ActionType::OpenApp => "open-app",
            ActionType::InputText => "input-text",
            ActionType::Click => "click",
            ActionType::LongPress => "long-press",
            ActionType::Wait => "wait",
            ActionType::ScrollUp => "scroll-up",
            ActionType::ScrollDown => "scroll-down",
            ActionType::ScrollLeft => "scroll-left",
            ActionType::ScrollRight => "scroll-right",
            ActionType::NavigateHome => "navigate-home",
            ActionType::NavigateBack => "navigate-back",
        }
    }
}

/// A structured agent action, serialized as `{"action-type": .., "action-extra": ..}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "ActionRepr", into = "ActionRepr")]
pub enum Action {
    OpenApp(String),
    InputText(String),
    Click(usize),
    LongPress(usize),
    Wait,
    ScrollUp,
    ScrollDown,
    ScrollLeft,
    ScrollRight,
    NavigateHome,
    NavigateBack,
}

impl Action {
    pub fn action_type(&self) -> ActionType {
        match self {
            Action::OpenApp(_) => ActionType::OpenApp,
            Action::InputText(_) => ActionType::InputText,
            Action::Click(_) => ActionType::Click,
            Action::LongPress(_) => ActionType::LongPress,
            Action::Wait => ActionType::Wait,
            Action::ScrollUp => ActionType::ScrollUp,
            Action::ScrollDown => ActionType::ScrollDown,
            Action::ScrollLeft => ActionType::ScrollLeft,
            Action::ScrollRight => ActionType::ScrollRight,
            Action::NavigateHome => ActionType::NavigateHome,
            Action::NavigateBack => ActionType::NavigateBack,
        }
    }

    /// Builds an action from its type and extra, checking the extra matches the type.
    pub fn from_parts(action_type: ActionType, extra: Option<ActionExtra>) -> Result<Self> {
        use ActionType as T;
        let bad = || {
            Error::Encoding(format!(
                "action {} does not take extra {:?}",
                action_type.name(),
                extra
            ))
        };
        Ok(match (action_type, extra.clone()) {
            (T::OpenApp, Some(ActionExtra::Text(s))) => Action::OpenApp(s),
            (T::InputText, Some(ActionExtra::Text(s))) => Action::InputText(s),
            (T::Click, Some(ActionExtra::Element(i))) => Action::Click(i),
            (T::LongPress, Some(ActionExtra::Element(i))) => Action::LongPress(i),
            (T::Wait, None) => Action::Wait,
            (T::ScrollUp, None) => Action::ScrollUp,
            (T::ScrollDown, None) => Action::ScrollDown,
            (T::ScrollLeft, None) => Action::ScrollLeft,
            (T::ScrollRight, None) => Action::ScrollRight,
            (T::NavigateHome, None) => Action::NavigateHome,
            (T::NavigateBack, None) => Action::NavigateBack,
            _ => return Err(bad()),
        })
    }

    pub fn extra(&self) -> Option<ActionExtra> {
        match self {
            Action::OpenApp(s) | Action::InputText(s) => Some(ActionExtra::Text(s.clone())),
            Action::Click(i) | Action::LongPress(i) => Some(ActionExtra::Element(*i)),
            _ => None,
        }
    }

    pub fn target_element(&self) -> Option<usize> {
        match self {
            Action::Click(i) | Action::LongPress(i) => Some(*i),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ActionExtra {
    Element(usize),
    Text(String),
}

#[derive(Serialize, Deserialize)]
struct ActionRepr {
    #[serde(rename = "action-type")]
    action_type: ActionType,
    #[serde(rename = "action-extra", default, skip_serializing_if = "Option::is_none")]
    action_extra: Option<ActionExtra>,
}

impl TryFrom<ActionRepr> for Action {
    type Error = Error;

    fn try_from(r: ActionRepr) -> Result<Self> {
        Action::from_parts(r.action_type, r.action_extra)
    }
}

impl From<Action> for ActionRepr {
    fn from(a: Action) -> Self {
        ActionRepr {
            action_type: a.action_type(),
            action_extra: a.extra(),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serde_json::to_string(self).map_err(|_| fmt::Error)?)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub goal_text: String,
    /// Name of the foreground app, `None` on the launcher.
    pub app: Option<String>,
    pub element_list: Vec<UiElement>,
    pub action_history: Vec<Action>,
}

impl Observation {
    /// Text rendering of the observation as a language-model agent would read it.
    pub fn render(&self) -> String {
        let mut out = format!("Goal: {}\nUI elements:\n", self.goal_text);
        for e in &self.element_list {
            out.push_str(&serde_json::to_string(e).expect("element serializes"));
            out.push('\n');
        }
        out.push_str("History:\n");
        for a in &self.action_history {
            out.push_str(&a.to_string());
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn actions_serialize_in_the_json_action_format() {
        let a = Action::Click(5);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            r#"{"action-type":"click","action-extra":5}"#
        );
        let b = Action::OpenApp("Vexo".into());
        assert_eq!(
            serde_json::to_string(&b).unwrap(),
            r#"{"action-type":"open-app","action-extra":"Vexo"}"#
        );
        assert_eq!(
            serde_json::to_string(&Action::NavigateBack).unwrap(),
            r#"{"action-type":"navigate-back"}"#
        );
        for a in [a, b, Action::Wait, Action::InputText("alice".into())] {
            let back: Action = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
            assert_eq!(back, a);
        }
    }

    #[test]
    fn mismatched_extras_are_rejected() {
        assert!(serde_json::from_str::<Action>(r#"{"action-type":"wait","action-extra":3}"#).is_err());
        assert!(serde_json::from_str::<Action>(r#"{"action-type":"click","action-extra":"x"}"#).is_err());
        assert!(serde_json::from_str::<Action>(r#"{"action-type":"click"}"#).is_err());
    }

    #[test]
    fn difficulty_boundaries() {
        assert_eq!(Difficulty::from_optimal_len(3), Difficulty::Easy);
        assert_eq!(Difficulty::from_optimal_len(4), Difficulty::Easy);
        assert_eq!(Difficulty::from_optimal_len(5), Difficulty::Medium);
        assert_eq!(Difficulty::from_optimal_len(8), Difficulty::Medium);
        assert_eq!(Difficulty::from_optimal_len(9), Difficulty::Hard);
        assert_eq!(Difficulty::from_optimal_len(12), Difficulty::Hard);
    }
}
