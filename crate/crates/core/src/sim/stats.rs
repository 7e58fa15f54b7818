use super::state::Event;

/// Outcome of one simulated episode.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeStats {
    /// Clock at the end of the episode.
    pub horizon: f64,
    /// Mean over completed and truncated cases; 0 when no case arrived.
    pub mean_cycle_time: f64,
    pub completed_cases: usize,
    pub arrived_cases: usize,
    pub cycle_times: Vec<f64>,
    /// `horizon - arrival` for cases still open at the end.
    pub truncated_cycle_times: Vec<f64>,
    pub busy_time: Vec<f64>,
    pub utilization: Vec<f64>,
    pub reward_total: f64,
    pub assignments: usize,
    pub postpones: usize,
    pub trace: Vec<Event>,
}

impl EpisodeStats {
    pub fn max_utilization(&self) -> f64 {
        self.utilization.iter().copied().fold(0.0, f64::max)
    }

    /// Mean cycle time of completed cases only.
    pub fn completed_mean_cycle_time(&self) -> f64 {
        if self.cycle_times.is_empty() {
            0.0
        } else {
            self.cycle_times.iter().sum::<f64>() / self.cycle_times.len() as f64
        }
    }

    /// Rows of `(key, value)` for tabular export.
    pub fn key_values(&self) -> Vec<(String, String)> {
        let mut rows = vec![
            ("horizon".to_string(), self.horizon.to_string()),
            ("mean_cycle_time".to_string(), self.mean_cycle_time.to_string()),
            ("completed_cases".to_string(), self.completed_cases.to_string()),
            ("arrived_cases".to_string(), self.arrived_cases.to_string()),
            ("open_cases".to_string(), self.truncated_cycle_times.len().to_string()),
            ("reward_total".to_string(), self.reward_total.to_string()),
            ("assignments".to_string(), self.assignments.to_string()),
            ("postpones".to_string(), self.postpones.to_string()),
        ];
        for (r, u) in self.utilization.iter().enumerate() {
            rows.push((format!("utilization.{r}"), u.to_string()));
        }
        rows
    }
}
