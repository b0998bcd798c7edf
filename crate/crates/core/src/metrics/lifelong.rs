use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores `M[t][i]` of task `t`'s test set after learning task `i`, `t ≤ i`.
/// Indices are 1-based in the API; row `t` stores entries for `i = t..=T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricMatrix {
    pub metric: String,
    num_tasks: usize,
    values: Vec<Vec<Option<f64>>>,
}

impl MetricMatrix {
    pub fn new(metric: impl Into<String>, num_tasks: usize) -> Self {
        MetricMatrix {
            metric: metric.into(),
            num_tasks,
            values: (1..=num_tasks).map(|t| vec![None; num_tasks - t + 1]).collect(),
        }
    }

    /// Builds a complete matrix from rows, row `t` listing `M[t][t..=T]`.
    pub fn from_rows(metric: impl Into<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = MetricMatrix::new(metric, rows.len());
        for (t, row) in rows.into_iter().enumerate() {
            if row.len() != m.num_tasks - t {
                return Err(Error::dim(format!(
                    "row {} has {} entries, expected {}",
                    t + 1,
                    row.len(),
                    m.num_tasks - t
                )));
            }
            for (k, v) in row.into_iter().enumerate() {
                m.set(t + 1, t + 1 + k, v)?;
            }
        }
        Ok(m)
    }

    pub fn num_tasks(&self) -> usize {
        self.num_tasks
    }

    fn check(&self, task: usize, step: usize) -> Result<()> {
        if task == 0 || task > step || step > self.num_tasks {
            return Err(Error::Index(format!(
                "entry ({task}, {step}) outside the triangle of {} tasks",
                self.num_tasks
            )));
        }
        Ok(())
    }

    pub fn set(&mut self, task: usize, step: usize, value: f64) -> Result<()> {
        self.check(task, step)?;
        if !value.is_finite() || value < 0.0 {
            return Err(Error::validation("metric-finite-nonnegative", format!("value {value}")));
        }
        self.values[task - 1][step - task] = Some(value);
        Ok(())
    }

    pub fn get(&self, task: usize, step: usize) -> Option<f64> {
        self.check(task, step).ok()?;
        self.values[task - 1][step - task]
    }

    fn require(&self, task: usize, step: usize) -> Result<f64> {
        self.get(task, step)
            .ok_or_else(|| Error::usage(format!("{}: missing entry ({task}, {step})", self.metric)))
    }

    pub fn is_complete(&self) -> bool {
        self.values.iter().flatten().all(Option::is_some)
    }

    /// Every present entry as `(task, step, value)`, ordered by step then task.
    pub fn entries(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for step in 1..=self.num_tasks {
            for task in 1..=step {
                if let Some(v) = self.get(task, step) {
                    out.push((task, step, v));
                }
            }
        }
        out
    }
}

/// Per-step values and their mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub per_step: Vec<f64>,
    pub mean: f64,
}

/// Average over seen tasks after each step, then over steps.
pub fn m_seen(matrix: &MetricMatrix) -> Result<Aggregate> {
    if matrix.num_tasks == 0 {
        return Err(Error::usage("empty metric matrix"));
    }
    let mut per_step = Vec::with_capacity(matrix.num_tasks);
    for i in 1..=matrix.num_tasks {
        let mut s = 0.0;
        for t in 1..=i {
            s += matrix.require(t, i)?;
        }
        per_step.push(s / i as f64);
    }
    let mean = per_step.iter().sum::<f64>() / per_step.len() as f64;
    Ok(Aggregate { per_step, mean })
}

/// First-task score after each step, and its mean.
pub fn m_first(matrix: &MetricMatrix) -> Result<Aggregate> {
    if matrix.num_tasks == 0 {
        return Err(Error::usage("empty metric matrix"));
    }
    let per_step = (1..=matrix.num_tasks)
        .map(|i| matrix.require(1, i))
        .collect::<Result<Vec<_>>>()?;
    let mean = per_step.iter().sum::<f64>() / per_step.len() as f64;
    Ok(Aggregate { per_step, mean })
}
