use super::Dataset;
use crate::envsuite::{EnvSpec, TaskSpec};
use crate::error::{Error, Result};

/// Replaces every stored reward with `task`'s reward of the same
/// transition. States, actions and flags are copied untouched.
pub fn relabel(dataset: &Dataset, task: &TaskSpec) -> Result<Dataset> {
    let env = EnvSpec::by_name(&dataset.header.env)?;
    if env.kind != task.env {
        return Err(Error::config(format!(
            "task '{}' is for {:?} but the dataset was collected on {}",
            task.name, task.env, dataset.header.env
        )));
    }
    let mut out = dataset.clone();
    for i in 0..dataset.len() {
        let t = dataset.transitions.get(i);
        let r = task.reward(&env, t.state, t.action, t.next_state)?;
        out.transitions.set_reward(i, r);
    }
    out.header.relabel_task = Some(task.clone());
    Ok(out)
}
