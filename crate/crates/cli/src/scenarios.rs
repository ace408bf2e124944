//! Scenario runners. Each writes its tables through the [`Writer`] and
//! returns summary lines for standard output.

use optomech::dynamics::{EvolveOptions, Trajectory};
use optomech::fock::{thermal_state, FockCutoff};
use optomech::normal_modes::{bogoliubov_numeric, polariton_frequencies, stability_check};
use optomech::otto::{run_cycle, sweep_map, CycleRecord, TimescaleReport};
use optomech::squeezed_bath::{
    effective_bath_exact, evolve_effective_b, squeezing_decomposition, steady_variances, EffectiveBath, QuadratureStats,
    SqueezingDecomposition,
};
use serde::Serialize;

use crate::config::{Format, Scenario, Validated};
use crate::output::{format_num, Cell, Writer};
use crate::CliError;

pub fn run(v: &Validated, writer: &mut Writer) -> Result<Vec<String>, CliError> {
    let format = v.config.output.format;
    match v.config.scenario {
        Scenario::Spectrum => spectrum(v, writer, format),
        Scenario::Cycle => cycle(v, writer, format),
        Scenario::Sweep => sweep(v, writer, format),
        Scenario::Bath => bath(v, writer, format),
        Scenario::Validate => validation(v, writer, format),
    }
}

#[derive(Serialize)]
struct SpectrumRow {
    delta: f64,
    #[serde(rename = "omega_A")]
    omega_a: Option<f64>,
    #[serde(rename = "omega_B")]
    omega_b: Option<f64>,
    stable: bool,
}

fn spectrum(v: &Validated, w: &mut Writer, format: Format) -> Result<Vec<String>, CliError> {
    let section = v.config.spectrum.as_ref().expect("validated");
    let g = v.config.params.g;
    let rows: Vec<SpectrumRow> = section
        .delta
        .values()
        .into_iter()
        .map(|delta| match polariton_frequencies(delta, g) {
            Ok(s) => SpectrumRow { delta, omega_a: Some(s.omega_a), omega_b: Some(s.omega_b), stable: true },
            Err(_) => SpectrumRow { delta, omega_a: None, omega_b: None, stable: stability_check(delta, g) },
        })
        .collect();
    let stable = rows.iter().filter(|r| r.stable).count();
    match format {
        Format::Csv => w.csv(
            "spectrum",
            &["delta", "omega_A", "omega_B", "stable"],
            rows.iter().map(|r| vec![r.delta.into(), r.omega_a.into(), r.omega_b.into(), r.stable.into()]),
        )?,
        Format::Json => w.json("spectrum", &rows)?,
    }
    Ok(vec![format!("spectrum: {} detunings, {stable} stable", rows.len())])
}

fn cycle(v: &Validated, w: &mut Writer, format: Format) -> Result<Vec<String>, CliError> {
    let cfg = v.config.cycle_config().expect("validated");
    let rec = run_cycle(&cfg)?;
    match format {
        Format::Csv => {
            let s = &rec.series;
            w.csv(
                "trajectory",
                &["t", "n_a", "n_b", "N_A", "N_B", "energy", "purity"],
                (0..s.len()).map(|k| {
                    vec![
                        s.t[k].into(),
                        s.n_a[k].into(),
                        s.n_b[k].into(),
                        s.big_n_a[k].into(),
                        s.big_n_b[k].into(),
                        s.energy[k].into(),
                        s.purity[k].into(),
                    ]
                }),
            )?;
            w.csv("cycle_summary", &["quantity", "value"], summary_rows(&rec))?;
            w.csv(
                "strokes",
                &[
                    "stroke", "kind", "t_start", "t_end", "heat", "work", "energy_change", "closure_residual", "Q_a", "Q_b",
                    "W_a", "correlation", "N_A_end", "N_B_end",
                ],
                rec.strokes.iter().enumerate().map(|(k, s)| {
                    vec![
                        (k + 1).into(),
                        Cell::Text(format!("{:?}", s.kind).to_lowercase()),
                        s.t_start.into(),
                        s.t_end.into(),
                        s.ledger.heat.into(),
                        s.ledger.work.into(),
                        s.ledger.energy_change.into(),
                        s.ledger.closure_residual.into(),
                        s.bare_ledger.q_a.into(),
                        s.bare_ledger.q_b.into(),
                        s.bare_ledger.w_a.into(),
                        s.bare_ledger.correlation.into(),
                        s.populations_end.0.into(),
                        s.populations_end.1.into(),
                    ]
                }),
            )?;
        }
        Format::Json => w.json("cycle", &rec)?,
    }
    let closure = rec.strokes.iter().map(|s| s.ledger.closure_residual).fold(0.0, f64::max);
    Ok(vec![
        format!("efficiency = {}", rec.efficiency.map(format_num).unwrap_or_else(|| "undefined".into())),
        format!("analytic efficiency = {}", format_num(rec.analytic_efficiency)),
        format!("total work W_tot = {}", format_num(rec.total_work)),
        format!("first-law residual W1+W3+Q2+Q4 = {}", format_num(rec.first_law_residual)),
        format!("max per-stroke ledger closure residual = {}", format_num(closure)),
        format!("residual N_B gap after stroke 4 = {}", format_num(rec.thermal_gap)),
        format!("max trace drift = {}", format_num(rec.max_trace_drift)),
    ])
}

fn summary_rows(rec: &CycleRecord) -> Vec<Vec<Cell>> {
    let mut rows: Vec<(String, f64)> = Vec::new();
    for (k, e) in rec.node_energies.iter().enumerate() {
        rows.push((format!("E{}", k + 1), *e));
    }
    if let Some(a) = &rec.analytic_node_energies {
        for (k, e) in a.values.iter().enumerate() {
            rows.push((format!("E{}_analytic", k + 1), *e));
        }
    }
    rows.extend([
        ("final_energy".to_string(), rec.final_energy),
        ("W1".into(), rec.stroke_work[0]),
        ("W3".into(), rec.stroke_work[1]),
        ("Q2".into(), rec.stroke_heat[0]),
        ("Q4".into(), rec.stroke_heat[1]),
        ("Q1".into(), rec.ramp_heat[0]),
        ("Q3".into(), rec.ramp_heat[1]),
        ("W_tot".into(), rec.total_work),
        ("efficiency".into(), rec.efficiency.unwrap_or(f64::NAN)),
        ("analytic_efficiency".into(), rec.analytic_efficiency),
        ("first_law_residual".into(), rec.first_law_residual),
        ("thermal_gap".into(), rec.thermal_gap),
        ("max_trace_drift".into(), rec.max_trace_drift),
        ("max_hermiticity_error".into(), rec.max_hermiticity_error),
    ]);
    rows.into_iter().map(|(k, x)| vec![Cell::Text(k), x.into()]).collect()
}

fn sweep(v: &Validated, w: &mut Writer, format: Format) -> Result<Vec<String>, CliError> {
    let s = v.config.sweep.as_ref().expect("validated");
    let p = &v.config.params;
    let map = sweep_map(s.delta_i, &s.delta_f.values(), &s.g.values(), p.nbar_a, p.nbar_b);
    match format {
        Format::Csv => {
            let header: Vec<String> = std::iter::once("g".to_string()).chain(map.delta_f.iter().map(|d| format_num(*d))).collect();
            let cols: Vec<&str> = header.iter().map(String::as_str).collect();
            let matrix = |m: &Vec<Vec<Option<f64>>>| -> Vec<Vec<Cell>> {
                map.g.iter().zip(m).map(|(g, row)| std::iter::once(Cell::from(*g)).chain(row.iter().map(|x| Cell::from(*x))).collect()).collect()
            };
            w.csv("efficiency", &cols, matrix(&map.efficiency))?;
            w.csv("abs_work", &cols, matrix(&map.abs_work))?;
            let mask = map.g.iter().zip(&map.stability_mask).map(|(g, row)| {
                std::iter::once(Cell::from(*g)).chain(row.iter().map(|b| Cell::from(*b))).collect()
            });
            w.csv("stability_mask", &cols, mask)?;
        }
        Format::Json => w.json("sweep", &map)?,
    }
    let masked: usize = map.stability_mask.iter().flatten().filter(|m| **m).count();
    let best = map
        .abs_work
        .iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().enumerate().filter_map(move |(j, x)| x.map(|x| (x, i, j))))
        .max_by(|a, b| a.0.total_cmp(&b.0));
    let mut lines = vec![format!("sweep: {} x {} cells, {masked} masked unstable", map.g.len(), map.delta_f.len())];
    if let Some((x, i, j)) = best {
        lines.push(format!("max |W_B,tot| = {} at g = {}, delta_f = {}", format_num(x), map.g[i], map.delta_f[j]));
    }
    Ok(lines)
}

#[derive(Serialize)]
struct BathReport {
    omega_b: f64,
    bath: EffectiveBath,
    steady: QuadratureStats,
    decomposition: SqueezingDecomposition,
    cutoff: usize,
    trajectory: Trajectory,
}

/// Effective bath of B at the configured detuning, and the cutoff to use.
pub fn resolve_bath(v: &crate::config::RunConfig) -> Result<(EffectiveBath, usize, f64), CliError> {
    let b = v.bath.as_ref().expect("bath section");
    let p = &v.params;
    let bog = bogoliubov_numeric(b.delta, p.g)?;
    let bath = effective_bath_exact(&bog, p.kappa, p.gamma, p.nbar_a, p.nbar_b)?;
    let cutoff = b.cutoff.unwrap_or_else(|| bath.min_cutoff().max((8.0 * b.initial_population).ceil() as usize + 10));
    Ok((bath, cutoff, bog.spectrum.omega_b))
}

fn bath(v: &Validated, w: &mut Writer, format: Format) -> Result<Vec<String>, CliError> {
    let b = v.config.bath.as_ref().expect("validated");
    let (bath, cutoff, omega_b) = resolve_bath(&v.config)?;
    let steady = steady_variances(&bath);
    let decomposition = squeezing_decomposition(bath.nbar_b, bath.mbar_b)?;
    let rho0 = thermal_state(b.initial_population, FockCutoff::new(cutoff)?)?.state;
    let every = ((b.sample_spacing / b.dt).round() as usize).max(1);
    let (_, traj) = evolve_effective_b(&bath, omega_b, b.frame, &rho0, b.duration, &EvolveOptions::sampled(b.dt, every))?;
    let col = |n: &str| traj.series(n).expect("recorded");
    let (nb, x2, y2) = (col("N_B"), col("X2"), col("Y2"));
    let last = traj.times.len() - 1;
    let lines = vec![
        format!("Gamma_B = {}, N_B = {}, M_B = {}", format_num(bath.gamma_b), format_num(bath.nbar_b), format_num(bath.mbar_b)),
        format!("steady <X^2> = {}, <Y^2> = {}", format_num(steady.var_x), format_num(steady.var_y)),
        format!("final <N_B> = {}, <X^2> = {}, <Y^2> = {}", format_num(nb[last]), format_num(x2[last]), format_num(y2[last])),
        format!("max trace drift = {}", format_num(traj.max_trace_drift)),
    ];
    match format {
        Format::Csv => {
            w.csv(
                "bath",
                &["t", "N_B", "X2", "Y2", "purity"],
                (0..=last).map(|k| vec![traj.times[k].into(), nb[k].into(), x2[k].into(), y2[k].into(), traj.purity[k].into()]),
            )?;
            let rows = [
                ("omega_B", omega_b),
                ("Gamma_B", bath.gamma_b),
                ("N_B", bath.nbar_b),
                ("M_B", bath.mbar_b),
                ("rotation", bath.rotation),
                ("var_X", steady.var_x),
                ("var_Y", steady.var_y),
                ("uncertainty_product", steady.uncertainty_product()),
                ("n_th", decomposition.n_th),
                ("r", decomposition.r),
                ("cutoff", cutoff as f64),
            ];
            w.csv("bath_summary", &["quantity", "value"], rows.iter().map(|(k, x)| vec![Cell::from(*k), Cell::from(*x)]))?;
        }
        Format::Json => w.json("bath", &BathReport { omega_b, bath, steady, decomposition, cutoff, trajectory: traj })?,
    }
    Ok(lines)
}

#[derive(Serialize)]
struct ValidationReport<'a> {
    timescales: &'a Option<TimescaleReport>,
    warnings: &'a [String],
}

fn validation(v: &Validated, w: &mut Writer, format: Format) -> Result<Vec<String>, CliError> {
    let checks = v.hierarchy_status();
    match format {
        Format::Csv => w.csv(
            "validation",
            &["relation", "ratio", "status"],
            checks.iter().map(|(r, x, s)| vec![Cell::Text(r.clone()), (*x).into(), Cell::Text(format!("{s:?}").to_lowercase())]),
        )?,
        Format::Json => w.json("validation", &ValidationReport { timescales: &v.timescales, warnings: &v.warnings })?,
    }
    let mut lines = vec![format!("configuration valid ({} warnings)", v.warnings.len())];
    lines.extend(checks.iter().map(|(r, x, s)| format!("{r}: ratio {x:.3} [{s:?}]")));
    Ok(lines)
}
