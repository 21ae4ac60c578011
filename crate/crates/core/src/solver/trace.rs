use std::io::Write;

/// Header of the trace CSV.
pub const TRACE_COLUMNS: [&str; 8] = [
    "iter",
    "K",
    "res_y",
    "res_z",
    "x_step_norm",
    "stat_gap",
    "V",
    "wall_ms",
];

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    pub k_value: f64,
    pub res_y: f64,
    pub res_z: f64,
    /// `‖x_t − x_{t−1}‖ / η_x`; absent for the initial state.
    pub x_step_norm: Option<f64>,
    pub stat_gap: Option<f64>,
    pub potential: Option<f64>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationTrace {
    pub records: Vec<TraceRecord>,
    pub stopped_early: bool,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

impl IterationTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// Equal in every field except wall-clock time.
    pub fn same_values(&self, other: &IterationTrace) -> bool {
        self.records.len() == other.records.len()
            && self.stopped_early == other.stopped_early
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                a.iter == b.iter
                    && a.k_value.to_bits() == b.k_value.to_bits()
                    && a.res_y.to_bits() == b.res_y.to_bits()
                    && a.res_z.to_bits() == b.res_z.to_bits()
                    && a.x_step_norm.map(f64::to_bits) == b.x_step_norm.map(f64::to_bits)
                    && a.stat_gap.map(f64::to_bits) == b.stat_gap.map(f64::to_bits)
                    && a.potential.map(f64::to_bits) == b.potential.map(f64::to_bits)
            })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", TRACE_COLUMNS.join(","))?;
        for r in &self.records {
            writeln!(
                w,
                "{},{:e},{:e},{:e},{},{},{},{:.3}",
                r.iter,
                r.k_value,
                r.res_y,
                r.res_z,
                opt(r.x_step_norm),
                opt(r.stat_gap),
                opt(r.potential),
                r.wall_ms
            )?;
        }
        Ok(())
    }
}
