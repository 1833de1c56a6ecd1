mod eval;
mod model;
mod train;

pub use eval::{
    affine_fit, depth_sweep, encode_pgm, evaluate_head_esdf, head_pseudo_distances, naive_esdf_baseline,
    normalized_mae, probe_table_csv, sweep_table_csv, EsdfCalibration, EsdfMetrics, EsdfProbes, NaiveBaseline,
    NaiveRegressor, SliceImages, SweepEntry,
};
pub use model::{GradientTarget, HeadConfig, HeadModel, LogitSample, MAX_QUERY_RADIUS};
pub use train::{bce_grad, bce_loss, bce_with_logits, train_head, TrainConfig, TrainReport, ValidationSet};
