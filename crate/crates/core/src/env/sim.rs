//! Step semantics of the UI world.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::types::*;
use super::world::World;
use crate::error::{Error, Result};

pub const STACK_CAP: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Location {
    Launcher,
    Screen { app: usize, screen: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvState {
    pub task: usize,
    pub location: Location,
    pub stack: Vec<Location>,
    /// Element states changed during the episode, keyed by (app, screen, element).
    pub overrides: BTreeMap<(usize, usize, usize), String>,
    pub focus: Option<usize>,
    pub steps: usize,
    pub history: Vec<Action>,
    pub done: bool,
    pub success: bool,
}

impl EnvState {
    fn go(&mut self, to: Location) {
        if self.stack.len() == STACK_CAP {
            self.stack.remove(0);
        }
        self.stack.push(self.location);
        self.location = to;
        self.focus = None;
    }
}

impl World {
    /// Starts an episode of `task_id` on the launcher.
    pub fn reset(&self, task_id: &str) -> Result<(EnvState, Observation)> {
        let task = self.task_index(task_id)?;
        Ok(self.reset_index(task))
    }

    pub fn reset_index(&self, task: usize) -> (EnvState, Observation) {
        let state = EnvState {
            task,
            location: Location::Launcher,
            stack: Vec::new(),
            overrides: BTreeMap::new(),
            focus: None,
            steps: 0,
            history: Vec::new(),
            done: false,
            success: false,
        };
        let obs = self.observe(&state);
        (state, obs)
    }

    /// Elements visible at the current location, with episode state applied.
    pub fn elements(&self, state: &EnvState) -> Vec<UiElement> {
        match state.location {
            Location::Launcher => self.launcher.clone(),
            Location::Screen { app, screen } => self.apps[app].screens[screen]
                .elements
                .iter()
                .map(|e| {
                    let mut e = e.clone();
                    if let Some(s) = state.overrides.get(&(app, screen, e.element_id)) {
                        e.state = Some(s.clone());
                    }
                    e
                })
                .collect(),
        }
    }

    fn element_state(&self, state: &EnvState, app: usize, screen: usize, e: usize) -> Option<String> {
        state
            .overrides
            .get(&(app, screen, e))
            .cloned()
            .or_else(|| self.apps[app].screens[screen].elements[e].state.clone())
    }

    pub fn observe(&self, state: &EnvState) -> Observation {
        Observation {
            goal_text: self.tasks[state.task].goal_text.clone(),
            app: match state.location {
                Location::Launcher => None,
                Location::Screen { app, .. } => Some(self.apps[app].app_name.clone()),
            },
            element_list: self.elements(state),
            action_history: state.history.clone(),
        }
    }

    pub fn is_success(&self, state: &EnvState) -> bool {
        let t = &self.tasks[state.task].target;
        if state.location != (Location::Screen { app: t.app, screen: t.screen }) {
            return false;
        }
        match t.element {
            None => true,
            Some(e) => self.element_state(state, t.app, t.screen, e) == t.required_state,
        }
    }

    fn home(&self, app: usize) -> Location {
        Location::Screen {
            app,
            screen: self.apps[app].home_screen,
        }
    }

    /// Applies `action`. Invalid actions leave the screen unchanged but still cost a step.
    pub fn step(&self, state: &mut EnvState, action: &Action) -> Result<StepResult> {
        if state.done {
            return Err(Error::Contract("step called on a finished episode".into()));
        }
        match action {
            Action::OpenApp(name) => {
                if let Some(a) = self.app_index(name) {
                    state.go(self.home(a));
                }
            }
            Action::Click(e) => match state.location {
                Location::Launcher => {
                    if let Some(&a) = self.launcher_apps.get(*e) {
                        state.go(self.home(a));
                    }
                }
                Location::Screen { app, screen } => {
                    let spec = &self.apps[app].screens[screen];
                    if let Some(el) = spec.elements.get(*e) {
                        if let Some(&to) = spec.edges.get(e) {
                            state.go(Location::Screen { app, screen: to });
                        } else {
                            match el.kind {
                                ElementKind::Toggle => {
                                    let cur = self.element_state(state, app, screen, *e);
                                    let next = if cur.as_deref() == Some("on") { "off" } else { "on" };
                                    state.overrides.insert((app, screen, *e), next.into());
                                }
                                ElementKind::TextField => state.focus = Some(*e),
                                _ => {}
                            }
                        }
                    }
                }
            },
            Action::LongPress(e) => {
                if let Location::Screen { app, screen } = state.location {
                    let spec = &self.apps[app].screens[screen];
                    if spec.elements.get(*e).map(|el| el.kind) == Some(ElementKind::TextField) {
                        state.overrides.insert((app, screen, *e), String::new());
                        state.focus = Some(*e);
                    }
                }
            }
            Action::InputText(text) => {
                if let (Location::Screen { app, screen }, Some(e)) = (state.location, state.focus) {
                    if self.element_state(state, app, screen, e).as_deref() == Some("") {
                        state.overrides.insert((app, screen, e), text.clone());
                    }
                }
            }
            Action::NavigateBack => {
                if let Some(prev) = state.stack.pop() {
                    state.location = prev;
                    state.focus = None;
                }
            }
            Action::NavigateHome => {
                state.stack.clear();
                state.location = Location::Launcher;
                state.focus = None;
            }
            Action::Wait
            | Action::ScrollUp
            | Action::ScrollDown
            | Action::ScrollLeft
            | Action::ScrollRight => {}
        }
        state.history.push(action.clone());
        state.steps += 1;
        state.success = self.is_success(state);
        state.done = state.success || state.steps >= self.tasks[state.task].horizon;
        Ok(StepResult {
            observation: self.observe(state),
            reward: if state.success { 1.0 } else { 0.0 },
            done: state.done,
            success: state.success,
        })
    }
}
