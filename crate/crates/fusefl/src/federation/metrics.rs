//! Per-run metrics records.

use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct TrainRecord {
    pub phase: String,
    pub stage_or_round: usize,
    pub client: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct RunMetrics {
    pub records: Vec<TrainRecord>,
    pub final_test_accuracy: f64,
    /// Actual serialized payload bytes moved over the (simulated) network.
    pub comm_bytes: u64,
    /// Bytes needed to store the deployable model(s).
    pub storage_bytes: u64,
    /// Closed-form cost-model predictions for the same run.
    pub comm_bytes_closed_form: u64,
    pub storage_bytes_closed_form: u64,
    pub client_param_counts: Vec<usize>,
    pub global_param_count: usize,
    /// Per-client test accuracy of standalone models (ensemble runs).
    pub per_client_test_accuracy: Vec<f64>,
    /// Epochs actually spent per stage (progressive fusion runs).
    pub stage_epochs: Vec<usize>,
    /// Bit-equality audit of all fused parameters across later stages.
    pub freeze_audit_passed: bool,
    pub warnings: Vec<String>,
}

impl RunMetrics {
    /// The exact metrics.csv header.
    pub const CSV_HEADER: &'static str = "phase,stage_or_round,client,epoch,train_loss,train_acc";

    /// Render the training records as CSV (header + one row per record).
    pub fn records_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.phase, r.stage_or_round, r.client, r.epoch, r.train_loss, r.train_acc
            ));
        }
        out
    }
}
