//! Deterministic world generation.
//!
//! A world holds two disjoint app families built from the same categories. Family `A`
//! supplies demonstrations: wordy goals and almost no pre-filled text fields, so
//! long-press barely appears. Family `B` is the online task suite: different app
//! names, imperative goals, and a quota of tasks whose field must be cleared with
//! long-press before typing.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::text::{bucket, synth_word, words, CATEGORIES, LEXICON};
use super::types::*;
use crate::error::{Error, Result};
use crate::policy::{Vocabulary, E_MAX, GOAL_BUCKETS};

pub const WORLD_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TierCounts {
    pub easy: usize,
    pub medium: usize,
    pub hard: usize,
}

impl TierCounts {
    pub fn get(&self, d: Difficulty) -> usize {
        match d {
            Difficulty::Easy => self.easy,
            Difficulty::Medium => self.medium,
            Difficulty::Hard => self.hard,
        }
    }

    pub fn total(&self) -> usize {
        self.easy + self.medium + self.hard
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    /// Apps per family; one app per category in each family.
    pub apps_per_family: usize,
    pub screens_per_app: usize,
    /// Depth of the deepest screen, counting the app home screen as depth 1.
    pub max_depth: usize,
    /// Upper bound on elements per app screen.
    pub elements_per_screen: usize,
    pub demo_tasks: TierCounts,
    pub online_tasks: TierCounts,
    /// Minimum share of online tasks per tier that need a long-press.
    pub online_long_press_fraction: f64,
    /// Probability that an online app's text field starts pre-filled.
    pub online_prefill_probability: f64,
    /// Number of demonstration tasks that need a long-press.
    pub demo_long_press_tasks: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            apps_per_family: 6,
            screens_per_app: 14,
            max_depth: 8,
            elements_per_screen: 9,
            demo_tasks: TierCounts {
                easy: 18,
                medium: 18,
                hard: 14,
            },
            online_tasks: TierCounts {
                easy: 16,
                medium: 16,
                hard: 12,
            },
            online_long_press_fraction: 0.25,
            online_prefill_probability: 0.5,
            demo_long_press_tasks: 1,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(m.to_string()));
        if self.apps_per_family == 0 {
            return err("apps_per_family must be at least 1");
        }
        if self.apps_per_family > CATEGORIES.len() || 2 * self.apps_per_family > E_MAX {
            return err("too many apps for the launcher");
        }
        if self.max_depth < 2 || self.screens_per_app < self.max_depth {
            return err("screens_per_app must be at least max_depth, which must be at least 2");
        }
        if !(5..=E_MAX).contains(&self.elements_per_screen) {
            return err("elements_per_screen must be between 5 and 24");
        }
        if self.demo_tasks.total() == 0 || self.online_tasks.total() == 0 {
            return err("both task suites need at least one task");
        }
        if !(0.0..=1.0).contains(&self.online_long_press_fraction)
            || !(0.0..=1.0).contains(&self.online_prefill_probability)
        {
            return err("fractions must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub format_version: u32,
    pub seed: u64,
    pub config: WorldConfig,
    pub hash_salt: u64,
    pub lexicon: Vec<String>,
    /// App icons shown on the launcher; clicking icon `i` opens `launcher_apps[i]`.
    pub launcher: Vec<UiElement>,
    pub launcher_apps: Vec<usize>,
    pub apps: Vec<AppSpec>,
    pub tasks: Vec<Task>,
    pub vocabulary: Vocabulary,
}

const TEMPLATE_WORDS: &[&str] = &[
    "please", "help", "me", "find", "the", "page", "inside", "app", "so", "that", "i", "can",
    "look", "at", "it", "could", "you", "go", "into", "and", "switch", "on", "option", "for",
    "would", "like", "to", "open", "type", "field", "replace", "whatever", "is", "written", "in",
    "with", "turn", "enter", "change",
];

fn goal_text(family: Family, kind: TaskKind, app: &str, label: &str, text: &str) -> String {
    match (family, kind) {
        (Family::A, TaskKind::Navigate) => {
            format!("Please help me find the {label} page inside the {app} app so that I can look at it")
        }
        (Family::A, TaskKind::Toggle) => {
            format!("Could you please go into the {app} app and switch on the {label} option for me")
        }
        (Family::A, TaskKind::InputText) => {
            format!("I would like you to open {app} and type {text} into the {label} field please")
        }
        (Family::A, TaskKind::ReplaceText) => format!(
            "I would like you to open {app} and replace whatever is written in the {label} field with {text}"
        ),
        (Family::B, TaskKind::Navigate) => format!("Open {label} in {app}"),
        (Family::B, TaskKind::Toggle) => format!("Turn on {label} in {app}"),
        (Family::B, TaskKind::InputText) => format!("Enter {text} in the {label} field in {app}"),
        (Family::B, TaskKind::ReplaceText) => format!("Change {label} to {text} in {app}"),
    }
}

struct Names {
    used: HashSet<String>,
}

impl Names {
    fn new() -> Self {
        let mut used: HashSet<String> = TEMPLATE_WORDS.iter().map(|w| w.to_string()).collect();
        used.extend(LEXICON.iter().map(|w| w.to_string()));
        used.extend(CATEGORIES.iter().map(|w| w.to_string()));
        Names { used }
    }

    fn fresh<R: Rng>(&mut self, rng: &mut R, syllables: usize) -> String {
        loop {
            let w = synth_word(rng, syllables);
            if self.used.insert(w.to_lowercase()) {
                return w;
            }
        }
    }
}

struct Candidate {
    kind: TaskKind,
    app: usize,
    screen: usize,
    element: Option<usize>,
    optimal_len: usize,
}

fn random_text<R: Rng>(rng: &mut R, avoid: &str) -> String {
    loop {
        let first = LEXICON[rng.gen_range(0..LEXICON.len())];
        let text = if rng.gen_bool(0.3) {
            let second = LEXICON[rng.gen_range(0..LEXICON.len())];
            if second == first {
                continue;
            }
            format!("{first} {second}")
        } else {
            first.to_string()
        };
        if text != avoid {
            return text;
        }
    }
}

fn build_app<R: Rng>(
    rng: &mut R,
    names: &mut Names,
    cfg: &WorldConfig,
    family: Family,
    category: &str,
) -> AppSpec {
    let app_name = names.fresh(rng, 2);
    let n = cfg.screens_per_app;
    let d_max = cfg.max_depth;
    let mut parent: Vec<Option<usize>> = vec![None];
    let mut depth = vec![1usize];
    for i in 1..d_max {
        parent.push(Some(i - 1));
        depth.push(i + 1);
    }
    let max_children = 3;
    let mut n_children = vec![0usize; n];
    for i in 1..d_max {
        n_children[i - 1] += 1;
    }
    for _ in d_max..n {
        let open: Vec<usize> = (0..depth.len())
            .filter(|&s| depth[s] < d_max && n_children[s] < max_children)
            .collect();
        let p = open[rng.gen_range(0..open.len())];
        n_children[p] += 1;
        parent.push(Some(p));
        depth.push(depth[p] + 1);
    }
    let titles: Vec<String> = (0..n)
        .map(|s| if s == 0 { app_name.clone() } else { names.fresh(rng, 3) })
        .collect();

    let mut screens = Vec::with_capacity(n);
    for s in 0..n {
        let children: Vec<usize> = (0..n).filter(|&c| parent[c] == Some(s)).collect();
        // (kind, label, state, edge target)
        let mut elems: Vec<(ElementKind, String, Option<String>, Option<usize>)> = Vec::new();
        for &c in &children {
            let kind = if rng.gen_bool(0.7) {
                ElementKind::Button
            } else {
                ElementKind::ListItem
            };
            elems.push((kind, titles[c].clone(), None, Some(c)));
        }
        let deep = depth[s] + 1 >= d_max;
        let toggles = if deep { 2 } else { rng.gen_range(1..=2) };
        for _ in 0..toggles {
            elems.push((ElementKind::Toggle, names.fresh(rng, 3), Some("off".into()), None));
        }
        if deep || rng.gen_bool(0.6) {
            let state = if family == Family::B && rng.gen_bool(cfg.online_prefill_probability) {
                random_text(rng, "")
            } else {
                String::new()
            };
            elems.push((ElementKind::TextField, names.fresh(rng, 3), Some(state), None));
        }
        let labels = rng.gen_range(1..=2);
        for _ in 0..labels {
            if elems.len() < cfg.elements_per_screen {
                elems.push((ElementKind::Label, names.fresh(rng, 3), None, None));
            }
        }
        while elems.len() > cfg.elements_per_screen {
            // drop decorations first, never navigation
            let pos = elems
                .iter()
                .rposition(|e| e.3.is_none() && e.0 != ElementKind::TextField)
                .expect("a removable element exists");
            elems.remove(pos);
        }
        elems.shuffle(rng);
        let mut edges = BTreeMap::new();
        let elements = elems
            .into_iter()
            .enumerate()
            .map(|(id, (kind, label, state, edge))| {
                if let Some(t) = edge {
                    edges.insert(id, t);
                }
                UiElement {
                    element_id: id,
                    kind,
                    label,
                    state,
                }
            })
            .collect();
        screens.push(ScreenSpec {
            screen_id: s,
            title: titles[s].clone(),
            elements,
            edges,
        });
    }
    AppSpec {
        app_name,
        category: category.to_string(),
        family,
        screens,
        home_screen: 0,
    }
}

/// Depth of every screen (home = 1) by breadth-first search over the edges.
pub fn screen_depths(app: &AppSpec) -> Vec<Option<usize>> {
    let mut depth = vec![None; app.screens.len()];
    depth[app.home_screen] = Some(1);
    let mut queue = std::collections::VecDeque::from([app.home_screen]);
    while let Some(s) = queue.pop_front() {
        for &t in app.screens[s].edges.values() {
            if depth[t].is_none() {
                depth[t] = Some(depth[s].unwrap() + 1);
                queue.push_back(t);
            }
        }
    }
    depth
}

fn candidates(apps: &[AppSpec], family: Family) -> Vec<Candidate> {
    let mut out = Vec::new();
    for (a, app) in apps.iter().enumerate().filter(|(_, app)| app.family == family) {
        let depth = screen_depths(app);
        for (s, screen) in app.screens.iter().enumerate() {
            let d = depth[s].expect("generated screens are connected");
            if d >= 2 {
                out.push(Candidate {
                    kind: TaskKind::Navigate,
                    app: a,
                    screen: s,
                    element: None,
                    optimal_len: d,
                });
            }
            for e in &screen.elements {
                let (kind, len) = match e.kind {
                    ElementKind::Toggle => (TaskKind::Toggle, d + 1),
                    ElementKind::TextField if e.state.as_deref() == Some("") => {
                        (TaskKind::InputText, d + 2)
                    }
                    ElementKind::TextField => (TaskKind::ReplaceText, d + 2),
                    _ => continue,
                };
                out.push(Candidate {
                    kind,
                    app: a,
                    screen: s,
                    element: Some(e.element_id),
                    optimal_len: len,
                });
            }
        }
    }
    out
}

fn parent_label(app: &AppSpec, screen: usize) -> String {
    app.screens
        .iter()
        .find_map(|s| {
            s.edges
                .iter()
                .find(|(_, &t)| t == screen)
                .map(|(&e, _)| s.elements[e].label.clone())
        })
        .unwrap_or_else(|| app.screens[screen].title.clone())
}

fn make_task<R: Rng>(rng: &mut R, apps: &[AppSpec], c: &Candidate, id: String) -> Task {
    let app = &apps[c.app];
    let family = app.family;
    let (label, required, text) = match c.kind {
        TaskKind::Navigate => (parent_label(app, c.screen), None, String::new()),
        TaskKind::Toggle => {
            let e = &app.screens[c.screen].elements[c.element.unwrap()];
            (e.label.clone(), Some("on".to_string()), String::new())
        }
        TaskKind::InputText | TaskKind::ReplaceText => {
            let e = &app.screens[c.screen].elements[c.element.unwrap()];
            let text = random_text(rng, e.state.as_deref().unwrap_or(""));
            (e.label.clone(), Some(text.clone()), text)
        }
    };
    Task {
        task_id: id,
        goal_text: goal_text(family, c.kind, &app.app_name, &label, &text),
        kind: c.kind,
        family,
        target: TargetPredicate {
            app: c.app,
            screen: c.screen,
            element: c.element,
            required_state: required,
        },
        horizon: 2 * c.optimal_len + 2,
        optimal_len: c.optimal_len,
        difficulty: Difficulty::from_optimal_len(c.optimal_len),
        category: app.category.clone(),
    }
}

fn select_tasks<R: Rng>(
    rng: &mut R,
    apps: &[AppSpec],
    family: Family,
    counts: TierCounts,
    long_press_fraction: f64,
    prefix: &str,
) -> Result<Vec<Task>> {
    let mut pool = candidates(apps, family);
    pool.shuffle(rng);
    let mut tasks = Vec::new();
    for tier in Difficulty::ALL {
        let want = counts.get(tier);
        let in_tier: Vec<&Candidate> = pool
            .iter()
            .filter(|c| Difficulty::from_optimal_len(c.optimal_len) == tier)
            .collect();
        let (replace, plain): (Vec<&Candidate>, Vec<&Candidate>) =
            in_tier.into_iter().partition(|c| c.kind == TaskKind::ReplaceText);
        let quota = ((want as f64) * long_press_fraction).ceil() as usize;
        let take_replace = quota.min(replace.len()).min(want);
        let take_plain = want - take_replace;
        if plain.len() < take_plain {
            return Err(Error::Config(format!(
                "world has only {} {} candidates for {} {:?} tasks",
                plain.len() + replace.len(),
                tier.name(),
                want,
                family
            )));
        }
        let chosen: Vec<&Candidate> = replace[..take_replace]
            .iter()
            .chain(&plain[..take_plain])
            .copied()
            .collect();
        for c in chosen {
            let id = format!("{prefix}-{:03}", tasks.len());
            tasks.push(make_task(rng, apps, c, id));
        }
    }
    Ok(tasks)
}

fn goal_buckets(salt: u64, goal: &str) -> BTreeSet<usize> {
    words(goal).iter().map(|w| bucket(salt, w, GOAL_BUCKETS)).collect()
}

fn labels_collide(salt: u64, world_labels: &[String]) -> bool {
    let mut seen = HashSet::new();
    world_labels
        .iter()
        .any(|l| !seen.insert(super::text::label_code(salt, l).to_bits()))
}

/// Generates the world for `seed`.
pub fn build_world(seed: u64, config: &WorldConfig) -> Result<World> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut names = Names::new();
    let mut categories: Vec<&str> = CATEGORIES.to_vec();
    categories.shuffle(&mut rng);
    let categories = &categories[..config.apps_per_family];

    let mut apps = Vec::new();
    for family in [Family::A, Family::B] {
        for cat in categories {
            apps.push(build_app(&mut rng, &mut names, config, family, cat));
        }
    }

    // Pre-fill the fields of the few demonstrations that need a long-press.
    let mut demo_fields: Vec<(usize, usize, usize, usize)> = candidates(&apps, Family::A)
        .into_iter()
        .filter(|c| c.kind == TaskKind::InputText)
        .map(|c| (c.optimal_len, c.app, c.screen, c.element.unwrap()))
        .collect();
    demo_fields.sort();
    demo_fields.truncate(config.demo_long_press_tasks.min(demo_fields.len()));
    for &(_, a, s, e) in &demo_fields {
        apps[a].screens[s].elements[e].state = Some(random_text(&mut rng, ""));
    }

    let mut tasks = select_tasks(
        &mut rng,
        &apps,
        Family::A,
        config.demo_tasks,
        0.0,
        "a",
    )?;
    // the pre-filled demo fields are only useful if their tasks are in the suite
    let forced: Vec<Candidate> = demo_fields
        .iter()
        .filter(|&&(_, a, s, e)| {
            !tasks
                .iter()
                .any(|t| t.target.app == a && t.target.screen == s && t.target.element == Some(e))
        })
        .map(|&(len, a, s, e)| Candidate {
            kind: TaskKind::ReplaceText,
            app: a,
            screen: s,
            element: Some(e),
            optimal_len: len,
        })
        .collect();
    for c in forced {
        // replace the last plain task of the same tier so tier counts are kept
        let tier = Difficulty::from_optimal_len(c.optimal_len);
        if let Some(pos) = tasks
            .iter()
            .rposition(|t| t.difficulty == tier && t.kind != TaskKind::ReplaceText)
        {
            let id = tasks[pos].task_id.clone();
            tasks[pos] = make_task(&mut rng, &apps, &c, id);
        }
    }
    tasks.extend(select_tasks(
        &mut rng,
        &apps,
        Family::B,
        config.online_tasks,
        config.online_long_press_fraction,
        "b",
    )?);

    let mut launcher_apps: Vec<usize> = (0..apps.len()).collect();
    launcher_apps.shuffle(&mut rng);
    let launcher = launcher_apps
        .iter()
        .enumerate()
        .map(|(i, &a)| UiElement {
            element_id: i,
            kind: ElementKind::Button,
            label: apps[a].app_name.clone(),
            state: None,
        })
        .collect();

    let all_labels: Vec<String> = apps
        .iter()
        .flat_map(|a| a.screens.iter().flat_map(|s| s.elements.iter().map(|e| e.label.clone())))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut hash_salt: u64 = rng.gen();
    for _ in 0..1000 {
        let goals: HashSet<BTreeSet<usize>> =
            tasks.iter().map(|t| goal_buckets(hash_salt, &t.goal_text)).collect();
        if goals.len() == tasks.len() && !labels_collide(hash_salt, &all_labels) {
            break;
        }
        hash_salt = hash_salt.wrapping_add(1);
    }

    let vocabulary = Vocabulary::new(
        apps.iter().map(|a| a.app_name.clone()).collect(),
        LEXICON.iter().map(|w| w.to_string()).collect(),
    );
    Ok(World {
        format_version: WORLD_FORMAT_VERSION,
        seed,
        config: config.clone(),
        hash_salt,
        lexicon: LEXICON.iter().map(|w| w.to_string()).collect(),
        launcher,
        launcher_apps,
        apps,
        tasks,
        vocabulary,
    })
}

impl World {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("world serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let w: World = serde_json::from_str(s)?;
        if w.format_version != WORLD_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "world format version {} unsupported",
                w.format_version
            )));
        }
        Ok(w)
    }

    pub fn content_hash(&self) -> String {
        crate::nn::checkpoint::sha256_hex(self.to_json().as_bytes())
    }

    pub fn task_index(&self, task_id: &str) -> Result<usize> {
        self.tasks
            .iter()
            .position(|t| t.task_id == task_id)
            .ok_or_else(|| Error::Lookup(format!("unknown task {task_id:?}")))
    }

    pub fn task(&self, task_id: &str) -> Result<&Task> {
        Ok(&self.tasks[self.task_index(task_id)?])
    }

    pub fn tasks_of(&self, family: Family) -> impl Iterator<Item = (usize, &Task)> {
        self.tasks.iter().enumerate().filter(move |(_, t)| t.family == family)
    }

    pub fn categories(&self) -> Vec<String> {
        self.apps
            .iter()
            .map(|a| a.category.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn app_index(&self, name: &str) -> Option<usize> {
        self.apps.iter().position(|a| a.app_name == name)
    }
}

/// Difficulty tier of a task, derived from its shortest solution.
pub fn task_difficulty(world: &World, task_id: &str) -> Result<Difficulty> {
    Ok(Difficulty::from_optimal_len(world.task(task_id)?.optimal_len))
}
