//! Scripted expert and demonstration dataset.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::types::*;
use super::world::World;
use crate::error::{Error, Result};

/// Screens from the app home to `target`, home excluded, as (screen, element clicked to reach it).
fn route(app: &AppSpec, target: usize) -> Vec<(usize, usize)> {
    let mut parent = vec![None; app.screens.len()];
    let mut queue = std::collections::VecDeque::from([app.home_screen]);
    let mut seen = vec![false; app.screens.len()];
    seen[app.home_screen] = true;
    while let Some(s) = queue.pop_front() {
        for (&e, &t) in &app.screens[s].edges {
            if !seen[t] {
                seen[t] = true;
                parent[t] = Some((s, e));
                queue.push_back(t);
            }
        }
    }
    let mut path = Vec::new();
    let mut cur = target;
    while let Some((p, e)) = parent[cur] {
        path.push((cur, e));
        cur = p;
    }
    path.reverse();
    path
}

/// Shortest action sequence solving the task from the launcher.
pub fn optimal_actions(world: &World, task_id: &str) -> Result<Vec<Action>> {
    let task = world.task(task_id)?;
    let t = &task.target;
    let app = &world.apps[t.app];
    let mut out = vec![Action::OpenApp(app.app_name.clone())];
    out.extend(route(app, t.screen).into_iter().map(|(_, e)| Action::Click(e)));
    match (task.kind, t.element, &t.required_state) {
        (TaskKind::Navigate, _, _) => {}
        (TaskKind::Toggle, Some(e), _) => out.push(Action::Click(e)),
        (TaskKind::InputText, Some(e), Some(text)) => {
            out.push(Action::Click(e));
            out.push(Action::InputText(text.clone()));
        }
        (TaskKind::ReplaceText, Some(e), Some(text)) => {
            out.push(Action::LongPress(e));
            out.push(Action::InputText(text.clone()));
        }
        _ => return Err(Error::Internal(format!("malformed task {task_id}"))),
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoRecord {
    pub obs: Observation,
    pub action: Action,
    pub task_id: String,
}

/// Expert demonstrations on the demonstration family, `per_task` copies of each.
pub fn generate_sft_dataset(world: &World, per_task: usize) -> Result<Vec<DemoRecord>> {
    let mut out = Vec::new();
    for (_, task) in world.tasks_of(Family::A) {
        let actions = optimal_actions(world, &task.task_id)?;
        let mut episode = Vec::with_capacity(actions.len());
        let (mut state, mut obs) = world.reset(&task.task_id)?;
        for a in actions {
            episode.push(DemoRecord {
                obs: obs.clone(),
                action: a.clone(),
                task_id: task.task_id.clone(),
            });
            obs = world.step(&mut state, &a)?.observation;
        }
        if !state.success {
            return Err(Error::Internal(format!("expert failed on {}", task.task_id)));
        }
        for _ in 0..per_task {
            out.extend(episode.iter().cloned());
        }
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(mut w: W, records: &[DemoRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<DemoRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}
