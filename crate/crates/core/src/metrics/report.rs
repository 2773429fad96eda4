use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "id,dice,iou,precision,recall,acc,bf1,hf_miss_pct,npv,fdr,specificity,ac_pct,sc,bp,md,\
mi_parvo,mi_magno,mi_konio,mi_onoff,w_parvo,w_magno,w_konio,w_onoff";

/// One evaluated image. Optional fields are blank in the CSV.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub id: String,
    pub dice: f64,
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub acc: f64,
    pub bf1: f64,
    pub hf_miss_pct: Option<f64>,
    pub npv: f64,
    pub fdr: f64,
    pub specificity: f64,
    pub ac_pct: f64,
    pub sc: f64,
    pub bp: f64,
    pub md: f64,
    pub mi_parvo: Option<f64>,
    pub mi_magno: Option<f64>,
    pub mi_konio: Option<f64>,
    pub mi_onoff: Option<f64>,
    pub w_parvo: Option<f64>,
    pub w_magno: Option<f64>,
    pub w_konio: Option<f64>,
    pub w_onoff: Option<f64>,
}

impl ImageMetrics {
    pub fn set_pathways(&mut self, mi: [f64; 4], w: [f64; 4]) {
        [self.mi_parvo, self.mi_magno, self.mi_konio, self.mi_onoff] = mi.map(Some);
        [self.w_parvo, self.w_magno, self.w_konio, self.w_onoff] = w.map(Some);
    }

    fn numeric(&self) -> [(&'static str, Option<f64>); 22] {
        [
            ("dice", Some(self.dice)),
            ("iou", Some(self.iou)),
            ("precision", Some(self.precision)),
            ("recall", Some(self.recall)),
            ("acc", Some(self.acc)),
            ("bf1", Some(self.bf1)),
            ("hf_miss_pct", self.hf_miss_pct),
            ("npv", Some(self.npv)),
            ("fdr", Some(self.fdr)),
            ("specificity", Some(self.specificity)),
            ("ac_pct", Some(self.ac_pct)),
            ("sc", Some(self.sc)),
            ("bp", Some(self.bp)),
            ("md", Some(self.md)),
            ("mi_parvo", self.mi_parvo),
            ("mi_magno", self.mi_magno),
            ("mi_konio", self.mi_konio),
            ("mi_onoff", self.mi_onoff),
            ("w_parvo", self.w_parvo),
            ("w_magno", self.w_magno),
            ("w_konio", self.w_konio),
            ("w_onoff", self.w_onoff),
        ]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<ImageMetrics>,
}

#[derive(Serialize)]
struct Summary {
    count: usize,
    /// Images lacking a fold mask, excluded from the `hf_miss_pct` mean.
    missing_hf: usize,
    mean: serde_json::Map<String, serde_json::Value>,
}

impl MetricsReport {
    pub fn missing_hf(&self) -> usize {
        self.rows.iter().filter(|r| r.hf_miss_pct.is_none()).count()
    }

    /// Per-column means over the rows that have the value, in row order.
    pub fn means(&self) -> Vec<(&'static str, Option<f64>)> {
        let Some(first) = self.rows.first() else {
            return ImageMetrics::default().numeric().iter().map(|(k, _)| (*k, None)).collect();
        };
        (0..first.numeric().len())
            .map(|j| {
                let vals: Vec<f64> = self.rows.iter().filter_map(|r| r.numeric()[j].1).collect();
                let mean = (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
                (first.numeric()[j].0, mean)
            })
            .collect()
    }

    pub fn mean_of(&self, key: &str) -> Option<f64> {
        self.means().into_iter().find(|(k, _)| *k == key).and_then(|(_, v)| v)
    }

    /// One row per image under the fixed header. When fold masks are
    /// missing a trailing `# warning:` line says so.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        w.write_record(CSV_HEADER.split(','))?;
        for r in &self.rows {
            let mut rec = vec![r.id.clone()];
            rec.extend(r.numeric().iter().map(|(_, v)| v.map(|x| x.to_string()).unwrap_or_default()));
            w.write_record(&rec)?;
        }
        let mut out = w.into_inner().map_err(|e| Error::Invalid(format!("flushing csv: {e}")))?;
        let missing = self.missing_hf();
        if missing > 0 {
            writeln!(out, "# warning: {missing} image(s) have no fold mask; hf_miss_pct left blank")
                .map_err(|e| Error::io(Path::new("<csv>"), e))?;
        }
        Ok(())
    }

    pub fn summary_json(&self) -> Result<String> {
        let mean = self.means().into_iter().map(|(k, v)| (k.to_string(), serde_json::json!(v))).collect();
        let s = Summary {
            count: self.rows.len(),
            missing_hf: self.missing_hf(),
            mean,
        };
        Ok(serde_json::to_string_pretty(&s)? + "\n")
    }

    /// Writes `metrics.csv` and `summary.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join("metrics.csv");
        let f = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        self.write_csv(std::io::BufWriter::new(f))?;
        let json_path = dir.join("summary.json");
        std::fs::write(&json_path, self.summary_json()?).map_err(|e| Error::io(&json_path, e))
    }
}
