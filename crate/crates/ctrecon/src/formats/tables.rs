use std::path::Path;

use ctrecon_core::net::EpochRecord;
use ctrecon_core::sparse::IterRecord;

use super::Result;

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(csv::Writer::from_path(path)?)
}

/// `iteration,objective,primal_residual,dual_residual`
pub fn write_solver_log_csv(path: &Path, history: &[IterRecord]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["iteration", "objective", "primal_residual", "dual_residual"])?;
    for r in history {
        w.write_record([
            r.iteration.to_string(),
            r.objective.to_string(),
            r.primal_residual.to_string(),
            r.dual_residual.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `epoch,learning_rate,train_loss,val_snr_db`
pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["epoch", "learning_rate", "train_loss", "val_snr_db"])?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.learning_rate.to_string(),
            r.train_loss.to_string(),
            r.val_snr.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
