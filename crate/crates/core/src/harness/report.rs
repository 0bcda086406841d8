//! CSV output. Floats use Rust's shortest round-trip formatting, so equal
//! values always produce equal bytes.

use std::path::Path;

use crate::error::Result;

use super::ablate::TableRow;
use super::evaluate::EvalRow;
use super::train::LogRow;

pub const EVAL_HEADER: [&str; 10] = [
    "variant",
    "channel",
    "snr_db",
    "seed",
    "scene",
    "psnr_db",
    "ssim",
    "mse",
    "symbols",
    "mask_bytes",
];

fn fmt_f64(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v}")
    }
}

fn to_string(mut w: csv::Writer<Vec<u8>>) -> Result<String> {
    w.flush()?;
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn eval_csv(rows: &[EvalRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(EVAL_HEADER)?;
    for r in rows {
        w.write_record([
            r.variant.name().to_string(),
            r.channel.name().to_string(),
            fmt_f64(r.snr_db),
            r.seed.to_string(),
            r.scene.to_string(),
            fmt_f64(r.metrics.psnr_db),
            fmt_f64(r.metrics.ssim),
            fmt_f64(r.metrics.mse),
            r.metrics.symbols_transmitted.to_string(),
            r.metrics.mask_side_info_bytes.to_string(),
        ])?;
    }
    to_string(w)
}

pub fn train_log_csv(rows: &[LogRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["step", "loss", "snr_db"])?;
    for r in rows {
        w.write_record([r.step.to_string(), fmt_f64(r.loss), fmt_f64(r.snr_db)])?;
    }
    to_string(w)
}

/// Variants × SNR table of mean PSNR.
pub fn table_csv(snr_list_db: &[f64], rows: &[TableRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["variant", "channel", "symbols", "mask_bytes", "ratio_vs_full"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(snr_list_db.iter().map(|s| format!("psnr_at_{}db", fmt_f64(*s))));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.variant.name().to_string(),
            r.channel.name().to_string(),
            r.bandwidth.symbols.to_string(),
            r.bandwidth.mask_bytes.to_string(),
            r.bandwidth.ratio_vs_full.to_string(),
        ];
        rec.extend(r.mean_psnr_db.iter().map(|v| fmt_f64(*v)));
        w.write_record(&rec)?;
    }
    to_string(w)
}

pub fn write_eval_csv(path: impl AsRef<Path>, rows: &[EvalRow]) -> Result<()> {
    std::fs::write(path, eval_csv(rows)?)?;
    Ok(())
}

pub fn write_train_log(path: impl AsRef<Path>, rows: &[LogRow]) -> Result<()> {
    std::fs::write(path, train_log_csv(rows)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelKind;
    use crate::metrics::{bandwidth_report, MetricRecord};
    use crate::variant::Variant;

    fn row(snr_db: f64, psnr_db: f64) -> EvalRow {
        EvalRow {
            variant: Variant::Proposed,
            channel: ChannelKind::RayleighMmse,
            snr_db,
            seed: 2,
            scene: 1,
            metrics: MetricRecord {
                psnr_db,
                ssim: 0.5,
                mse: 0.01,
                symbols_transmitted: 8192,
                mask_side_info_bytes: 16384,
            },
        }
    }

    #[test]
    fn eval_csv_layout() {
        let text = eval_csv(&[row(-3.0, 20.0), row(f64::INFINITY, f64::INFINITY)]).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "variant,channel,snr_db,seed,scene,psnr_db,ssim,mse,symbols,mask_bytes"
        );
        assert_eq!(lines[1], "proposed,rayleigh,-3,2,1,20,0.5,0.01,8192,16384");
        assert_eq!(lines[2], "proposed,rayleigh,inf,2,1,inf,0.5,0.01,8192,16384");
    }

    #[test]
    fn table_csv_layout() {
        let r = TableRow {
            variant: Variant::Proposed,
            channel: ChannelKind::Awgn,
            bandwidth: bandwidth_report(Variant::Proposed, (32, 32, 8), 8),
            mean_psnr_db: vec![21.25, 24.5],
        };
        let text = table_csv(&[-1.0, 7.0], &[r]).unwrap();
        assert_eq!(
            text,
            "variant,channel,symbols,mask_bytes,ratio_vs_full,psnr_at_-1db,psnr_at_7db\n\
             proposed,awgn,8192,16384,1/3,21.25,24.5\n"
        );
    }

    #[test]
    fn train_log_layout() {
        let text = train_log_csv(&[LogRow {
            step: 0,
            loss: 0.125,
            snr_db: 1.5,
        }])
        .unwrap();
        assert_eq!(text, "step,loss,snr_db\n0,0.125,1.5\n");
    }
}
