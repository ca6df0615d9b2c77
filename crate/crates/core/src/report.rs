//! Run statistics and artifact writers for the command-line driver.

use std::io::Write;

/// Everything the report records about one end-to-end run. The timing
/// fields are wall-clock and therefore informational only; the remaining
/// fields are deterministic for a given config and build.
#[derive(Debug, Clone)]
pub struct RunStats {
    pub method: String,
    pub coupling: String,
    pub frequency_hz: f64,
    pub n_elements: usize,
    /// total scatterer unknowns N
    pub n_direct: usize,
    /// reduced unknowns N_hat (None for direct runs)
    pub n_reduced: Option<usize>,
    pub coupling_memory_bytes: Option<usize>,
    pub iterations: usize,
    pub final_residual: f64,
    pub converged: bool,
    pub macromodel_generation_s: f64,
    pub matrix_fill_s: f64,
    pub preconditioner_factorization_s: f64,
    pub iterative_solver_s: f64,
}

pub fn write_report<W: Write>(w: &mut W, s: &RunStats) -> std::io::Result<()> {
    writeln!(w, "run statistics")?;
    writeln!(w, "==============")?;
    writeln!(w, "method:                     {}", s.method)?;
    writeln!(w, "coupling:                   {}", s.coupling)?;
    writeln!(w, "frequency_hz:               {:.6e}", s.frequency_hz)?;
    writeln!(w, "elements:                   {}", s.n_elements)?;
    writeln!(w, "total unknowns N:           {}", s.n_direct)?;
    match s.n_reduced {
        Some(nh) => {
            writeln!(w, "reduced unknowns N_hat:     {nh}")?;
            writeln!(w, "reduction N/N_hat:          {:.2}", s.n_direct as f64 / nh as f64)?;
        }
        None => writeln!(w, "reduced unknowns N_hat:     n/a")?,
    }
    match s.coupling_memory_bytes {
        Some(b) => writeln!(w, "coupling operator memory:   {b} bytes")?,
        None => writeln!(w, "coupling operator memory:   n/a")?,
    }
    writeln!(w, "solver iterations:          {}", s.iterations)?;
    writeln!(w, "final relative residual:    {:.6e}", s.final_residual)?;
    writeln!(w, "converged:                  {}", s.converged)?;
    writeln!(w)?;
    writeln!(w, "timings (wall clock, informational)")?;
    writeln!(w, "-----------------------------------")?;
    writeln!(w, "macromodel generation:      {:.3} s", s.macromodel_generation_s)?;
    writeln!(w, "matrix fill time:           {:.3} s", s.matrix_fill_s)?;
    writeln!(w, "preconditioner factorization: {:.3} s", s.preconditioner_factorization_s)?;
    writeln!(w, "iterative solver:           {:.3} s", s.iterative_solver_s)?;
    Ok(())
}

pub fn write_iterations_csv<W: Write>(
    w: &mut W,
    history: &[(usize, f64)],
) -> std::io::Result<()> {
    writeln!(w, "iteration,residual")?;
    for (it, res) in history {
        writeln!(w, "{it},{res:.9e}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats() -> RunStats {
        RunStats {
            method: "macromodel".into(),
            coupling: "dense".into(),
            frequency_hz: 2.0e8,
            n_elements: 9,
            n_direct: 4500,
            n_reduced: Some(900),
            coupling_memory_bytes: Some(12_960_000),
            iterations: 37,
            final_residual: 4.2e-7,
            converged: true,
            macromodel_generation_s: 12.5,
            matrix_fill_s: 31.0,
            preconditioner_factorization_s: 0.8,
            iterative_solver_s: 4.1,
        }
    }

    #[test]
    fn report_contains_key_fields() {
        let mut buf = Vec::new();
        write_report(&mut buf, &stats()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        for needle in [
            "total unknowns N:           4500",
            "reduced unknowns N_hat:     900",
            "reduction N/N_hat:          5.00",
            "macromodel generation",
            "matrix fill time",
            "preconditioner factorization",
            "iterative solver",
            "converged:                  true",
        ] {
            assert!(text.contains(needle), "missing: {needle}\n{text}");
        }
    }

    #[test]
    fn iterations_csv_schema() {
        let mut buf = Vec::new();
        write_iterations_csv(&mut buf, &[(1, 0.5), (2, 1.25e-3)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("iteration,residual"));
        assert_eq!(lines.next(), Some("1,5.000000000e-1"));
        assert_eq!(lines.next(), Some("2,1.250000000e-3"));
    }
}
