//! Batch front-end for the pocket conformation pipeline:
//! segment -> relax -> kick -> minimize -> features -> analyze.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ttgen_core::analysis;
use ttgen_core::features::{self, ScoreRow};
use ttgen_core::ffenergy::NonbondedSettings;
use ttgen_core::molio::{self, Cell, ConformationSet, Frame, MolecularSystem};
use ttgen_core::protocol::{self, Preset, ProtocolConfig, RunRecord, RunStatus};
use ttgen_core::segmentation::{build_segmentation, MicroKind, SegmentationConfig, SegmentationPlan};
use ttgen_core::{Parallelism, Vec3};

#[derive(Parser)]
#[command(name = "ttgen", version, about = "Pocket conformation generation and screening analytics")]
struct Cli {
    /// Comma-separated seed list; overrides the config file.
    #[arg(long, global = true, value_delimiter = ',')]
    seed_list: Vec<u64>,
    /// Protocol preset; overrides the config file.
    #[arg(long, global = true, value_parser = ["gentle", "aggressive"])]
    preset: Option<String>,
    /// Pocket movability cutoff radius, Angstrom.
    #[arg(long, global = true)]
    cutoff: Option<f64>,
    /// Output directory; created if missing.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Force sequential reductions for bit-reproducible output.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Worker threads for parallel sections (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Protocol config file (key = value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SystemArgs {
    /// Section-based system file with force-field parameters.
    system: PathBuf,
    /// Per-atom annotation table (residues, ligand flags, rotatable bonds).
    annotations: PathBuf,
    /// Pocket centre as `x,y,z`; defaults to the ligand centroid.
    #[arg(long)]
    centre: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Print the micro/macro group plan for a system.
    Segment(SystemArgs),
    /// Run the full relax/kick/minimize protocol and write conformations,
    /// traces, and a fallback score table.
    Generate {
        #[command(flatten)]
        sys: SystemArgs,
        /// Ligand identifier used in output tables; defaults to the system
        /// file stem.
        #[arg(long)]
        ligand_id: Option<String>,
    },
    /// Assemble the per-ligand feature table from one or more generate
    /// output directories.
    Features {
        /// Directories written by `generate`, one per ligand.
        run_dirs: Vec<PathBuf>,
        /// External docking score table; engine interaction energies are
        /// used for ligands missing from it.
        #[arg(long)]
        score_table: Option<PathBuf>,
        /// Trace downsampling stride.
        #[arg(long, default_value_t = 100)]
        factor: usize,
        /// Divisor applied to downsampled formation energies.
        #[arg(long, default_value_t = 1000.0)]
        scale: f64,
    },
    /// Align candidate frames onto a reference structure and report RMSD.
    Rmsd {
        /// Reference XYZ file; the first frame is used.
        reference: PathBuf,
        /// Candidate XYZ file; every frame is reported.
        candidate: PathBuf,
        /// Comma-separated 0-based atom subset for the alignment fit.
        #[arg(long, value_delimiter = ',')]
        subset: Vec<usize>,
        /// Skip the fit and compute plain coordinate RMSD (ligand poses in
        /// an already-aligned frame).
        #[arg(long)]
        no_fit: bool,
    },
    /// Fit a 2-component PCA on a feature table and emit projections.
    Pca {
        /// Table with `structure_label,source_tag,v1,...` rows.
        table: PathBuf,
    },
    /// Screening metrics from a `ligand_id,score,label` table
    /// (higher score = better, label 1 = active).
    Metrics {
        table: PathBuf,
        /// Top fraction for the normalized enrichment factor.
        #[arg(long, default_value_t = 0.1)]
        chi: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            // One machine-readable line: class, then the chain of context.
            eprintln!("ERROR {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    #[cfg(feature = "parallel")]
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
            .context("thread pool")?;
    }
    std::fs::create_dir_all(&cli.out_dir)
        .with_context(|| format!("creating {}", cli.out_dir.display()))?;

    match &cli.command {
        Command::Segment(args) => {
            let (system, plan) = load_and_segment(&cli, args)?;
            print_plan(&system, &plan);
            Ok(ExitCode::SUCCESS)
        }
        Command::Generate { sys, ligand_id } => {
            let (system, plan) = load_and_segment(&cli, sys)?;
            let id = ligand_id.clone().unwrap_or_else(|| {
                sys.system
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "ligand".into())
            });
            cmd_generate(&cli, &system, &plan, &id)
        }
        Command::Features {
            run_dirs,
            score_table,
            factor,
            scale,
        } => cmd_features(&cli, run_dirs, score_table.as_deref(), *factor, *scale),
        Command::Rmsd {
            reference,
            candidate,
            subset,
            no_fit,
        } => cmd_rmsd(reference, candidate, subset, *no_fit),
        Command::Pca { table } => cmd_pca(&cli, table),
        Command::Metrics { table, chi } => cmd_metrics(table, *chi),
    }
}

fn protocol_config(cli: &Cli) -> Result<ProtocolConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ProtocolConfig::parse_file(path)
            .with_context(|| format!("config {}", path.display()))?,
        None => ProtocolConfig::default(),
    };
    match cli.preset.as_deref() {
        Some("aggressive") => cfg.preset = Preset::Aggressive,
        Some("gentle") => cfg.preset = Preset::Gentle,
        _ => {}
    }
    if !cli.seed_list.is_empty() {
        cfg.seeds = cli.seed_list.clone();
    }
    cfg.parallelism = if cli.deterministic {
        Parallelism::Sequential
    } else {
        Parallelism::Parallel
    };
    cfg.validate().context("protocol config")?;
    Ok(cfg)
}

fn parse_centre(text: &str) -> Result<Vec3> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| ()))
        .collect::<std::result::Result<_, _>>()
        .ok()
        .filter(|v: &Vec<f64>| v.len() == 3)
        .context("--centre expects `x,y,z`")?;
    Ok(Vec3::new(parts[0], parts[1], parts[2]))
}

fn load_and_segment(cli: &Cli, args: &SystemArgs) -> Result<(MolecularSystem, SegmentationPlan)> {
    let system = molio::parse_system(&args.system)
        .with_context(|| format!("system {}", args.system.display()))?;
    let ann = molio::parse_annotations(&args.annotations, &system)
        .with_context(|| format!("annotations {}", args.annotations.display()))?;
    let centre = match &args.centre {
        Some(text) => parse_centre(text)?,
        None => {
            // Default pocket centre: ligand centroid.
            let ligand: Vec<Vec3> = system
                .atoms
                .iter()
                .zip(&ann.per_atom)
                .filter(|(_, a)| a.is_ligand)
                .map(|(at, _)| at.position)
                .collect();
            if ligand.is_empty() {
                bail!("no ligand atoms; pass --centre explicitly");
            }
            ligand.iter().sum::<Vec3>() / ligand.len() as f64
        }
    };
    let seg_cfg = SegmentationConfig::new(centre, cli.cutoff.unwrap_or(20.0));
    let plan = build_segmentation(&system, &ann, seg_cfg).context("segmentation")?;
    Ok((system, plan))
}

fn print_plan(system: &MolecularSystem, plan: &SegmentationPlan) {
    println!(
        "atoms {} movable {} fixed {}",
        plan.atom_count(),
        plan.movable_atoms.len(),
        plan.fixed_atoms.len()
    );
    println!("group_id,kind,atoms,anchored,ring_flip");
    for g in &plan.micro_groups {
        let kind = match g.kind {
            MicroKind::ProteinBackbone => "protein_backbone",
            MicroKind::ProteinSidechain => "protein_sidechain",
            MicroKind::LigandFragment => "ligand_fragment",
        };
        println!(
            "{},{},{},{},{}",
            g.id,
            kind,
            g.atoms.len(),
            g.anchor.is_some(),
            g.ring_flip_eligible
        );
    }
    for m in &plan.macro_groups {
        println!(
            "macro {} kind {:?} micro_groups {}",
            m.id,
            m.kind,
            m.micro_ids.len()
        );
    }
    let _ = system;
}

fn element_symbols(system: &MolecularSystem) -> Vec<String> {
    system.atoms.iter().map(|a| format!("T{}", a.type_id)).collect()
}

fn cmd_generate(
    cli: &Cli,
    system: &MolecularSystem,
    plan: &SegmentationPlan,
    ligand_id: &str,
) -> Result<ExitCode> {
    let cfg = protocol_config(cli)?;
    let settings = NonbondedSettings::default();

    let relax = protocol::relax_ligand(system, plan, &settings, &cfg).context("ligand relax")?;
    let records =
        protocol::generate_conformations(system, plan, &settings, &cfg).context("generate")?;
    let e_protein_init =
        features::protein_init_energy(system, plan, &settings).context("protein reference")?;

    let symbols = element_symbols(system);
    let out = &cli.out_dir;

    molio::write_conformations(
        &ConformationSet {
            element_symbols: symbols.clone(),
            frames: vec![Frame {
                label: "relaxed".into(),
                coordinates: relax.coords.clone(),
            }],
        },
        out.join("relaxed.xyz"),
    )?;

    let mut summary_rows = Vec::new();
    let mut failures = 0usize;
    for rec in &records {
        let status = match rec.status {
            RunStatus::Converged => "converged",
            RunStatus::Extended => "extended",
            RunStatus::Failed => "failed",
        };
        if rec.status == RunStatus::Failed {
            failures += 1;
            eprintln!("ERROR RunFailed: seed {} diverged to a non-finite state", rec.seed);
        } else {
            molio::write_conformations(
                &ConformationSet {
                    element_symbols: symbols.clone(),
                    frames: vec![Frame {
                        label: format!("{ligand_id} seed {}", rec.seed),
                        coordinates: rec.final_coords.clone(),
                    }],
                },
                out.join(format!("conf_seed{}.xyz", rec.seed)),
            )?;
        }
        write_trace(out, rec, e_protein_init)?;
        let e_final = rec.trace.last().map_or(f64::NAN, |t| t.energy.e_total);
        summary_rows.push(vec![
            Cell::Num(rec.seed as f64),
            Cell::Text(status.into()),
            Cell::Num(rec.e_post_kick),
            Cell::Num(e_final),
            Cell::Num(rec.trace.len() as f64),
        ]);
    }
    molio::write_table(
        out.join("records.csv"),
        &["seed", "status", "e_post_kick", "e_final", "trace_len"],
        &summary_rows,
    )?;

    // Engine-side interaction-energy scores in the external table's format.
    let ok_records: Vec<RunRecord> = records
        .iter()
        .filter(|r| r.status != RunStatus::Failed)
        .cloned()
        .collect();
    let scores = features::fallback_scores(system, plan, &relax.coords, &ok_records, &settings)
        .context("fallback scores")?;
    let mut header: Vec<String> = vec!["ligand_id".into(), "score_initial".into(), "score_relaxed".into()];
    for i in 1..=scores.per_conf.len() {
        header.push(format!("score_conf_{i}"));
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut row = vec![
        Cell::Text(ligand_id.into()),
        Cell::Num(scores.initial),
        Cell::Num(scores.relaxed),
    ];
    row.extend(scores.per_conf.iter().map(|&s| Cell::Num(s)));
    molio::write_table(out.join("scores.csv"), &header_refs, &[row])?;

    println!(
        "generated {} records ({} failed) for {ligand_id} in {}",
        records.len(),
        failures,
        out.display()
    );
    Ok(if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn write_trace(out: &Path, rec: &RunRecord, e_protein_init: f64) -> Result<()> {
    let rows: Vec<Vec<Cell>> = rec
        .trace
        .iter()
        .map(|t| {
            vec![
                Cell::Num(t.step as f64),
                Cell::Num(t.energy.e_total),
                Cell::Num(t.e_ligand),
                Cell::Num(t.energy.e_total - t.e_ligand - e_protein_init),
            ]
        })
        .collect();
    molio::write_table(
        out.join(format!("trace_seed{}.csv", rec.seed)),
        &["step", "e_total", "e_ligand", "delta_e"],
        &rows,
    )?;
    Ok(())
}

/// Read back one generate directory: per-seed downsampled formation-energy
/// blocks (None for failed seeds) plus its fallback score row.
fn read_run_dir(
    dir: &Path,
    factor: usize,
    scale: f64,
) -> Result<(String, Vec<Option<Vec<f64>>>, ScoreRow)> {
    let (_, rec_rows) = molio::read_table(dir.join("records.csv"))
        .with_context(|| format!("{}", dir.join("records.csv").display()))?;
    let mut blocks = Vec::new();
    for row in &rec_rows {
        let seed: u64 = row[0].parse().context("seed column")?;
        if row[1] == "failed" {
            blocks.push(None);
            continue;
        }
        let (header, rows) = molio::read_table(dir.join(format!("trace_seed{seed}.csv")))?;
        let col = header
            .iter()
            .position(|h| h == "delta_e")
            .context("trace missing delta_e column")?;
        let delta_e: Vec<f64> = rows
            .iter()
            .map(|r| r[col].parse::<f64>().context("delta_e value"))
            .collect::<Result<_>>()?;
        let trace = features::FeatureTrace {
            delta_e,
            e_protein_init: 0.0,
        };
        blocks.push(Some(features::downsample_trace(&trace, factor, scale)?));
    }

    let score_text = std::fs::read_to_string(dir.join("scores.csv"))?;
    let table = features::parse_score_table(&score_text)?;
    let (id, mut score_row) = table
        .into_iter()
        .next()
        .context("empty scores.csv")?;
    score_row.fallback = true;
    Ok((id, blocks, score_row))
}

fn cmd_features(
    cli: &Cli,
    run_dirs: &[PathBuf],
    score_table: Option<&Path>,
    factor: usize,
    scale: f64,
) -> Result<ExitCode> {
    if run_dirs.is_empty() {
        bail!("no run directories given");
    }
    let external: HashMap<String, ScoreRow> = match score_table {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("{}", path.display()))?;
            features::parse_score_table(&text)?
        }
        None => HashMap::new(),
    };

    let mut header: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    let mut failures = 0usize;
    for dir in run_dirs {
        match assemble_one(dir, &external, factor, scale) {
            Ok(fv) => {
                let this: Vec<String> = fv.names.clone();
                match &header {
                    None => header = Some(this),
                    Some(h) if *h != this => bail!("feature columns differ across ligands"),
                    _ => {}
                }
                let mut row = vec![Cell::Text(fv.ligand_id.clone())];
                row.extend(fv.values.iter().map(|&v| Cell::Num(v)));
                rows.push(row);
            }
            Err(err) => {
                failures += 1;
                eprintln!("ERROR {}: {err:#}", dir.display());
            }
        }
    }
    let header = header.context("every ligand failed")?;
    let mut cols = vec!["ligand_id".to_string()];
    cols.extend(header);
    let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    molio::write_table(cli.out_dir.join("features.csv"), &col_refs, &rows)?;
    println!(
        "features: {} ligands written, {} failed, {} columns",
        rows.len(),
        failures,
        cols.len() - 1
    );
    Ok(if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn assemble_one(
    dir: &Path,
    external: &HashMap<String, ScoreRow>,
    factor: usize,
    scale: f64,
) -> Result<features::FeatureVector> {
    let (id, blocks, fallback) = read_run_dir(dir, factor, scale)?;
    let scores = external.get(&id).unwrap_or(&fallback);
    if scores.per_conf.len() != blocks.len() {
        bail!(
            "{}: {} conformations but {} scores",
            id,
            blocks.len(),
            scores.per_conf.len()
        );
    }
    Ok(features::assemble_features(&id, &blocks, scores)?)
}

fn cmd_rmsd(reference: &Path, candidate: &Path, subset: &[usize], no_fit: bool) -> Result<ExitCode> {
    let reference = molio::read_conformations(reference)?;
    let candidate = molio::read_conformations(candidate)?;
    let ref_frame = &reference
        .frames
        .first()
        .context("reference has no frames")?
        .coordinates;
    println!("label,rmsd");
    for frame in &candidate.frames {
        let rmsd = if no_fit {
            analysis::ligand_rmsd(ref_frame, &frame.coordinates, None)?
        } else {
            let fit: Vec<usize> = if subset.is_empty() {
                (0..ref_frame.len()).collect()
            } else {
                subset.to_vec()
            };
            let aligned = analysis::kabsch_align(ref_frame, &frame.coordinates, &fit)?;
            let moved: Vec<Vec3> = frame.coordinates.iter().map(|&p| aligned.apply(p)).collect();
            analysis::ligand_rmsd(ref_frame, &moved, None)?
        };
        println!("{},{rmsd}", frame.label);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_pca(cli: &Cli, table: &Path) -> Result<ExitCode> {
    let (header, rows) = molio::read_table(table)?;
    if header.len() < 4 {
        bail!("pca table needs `structure_label,source_tag,v1,...` columns");
    }
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for row in &rows {
        labels.push((row[0].clone(), row[1].clone()));
        data.push(
            row[2..]
                .iter()
                .map(|v| v.parse::<f64>().context("pca value"))
                .collect::<Result<Vec<f64>>>()?,
        );
    }
    let model = analysis::pca_fit(&data)?;
    let proj = analysis::pca_transform(&model, &data)?;
    let out_rows: Vec<Vec<Cell>> = labels
        .iter()
        .zip(&proj)
        .map(|((label, source), p)| {
            vec![
                Cell::Text(label.clone()),
                Cell::Text(source.clone()),
                Cell::Num(p[0]),
                Cell::Num(p[1]),
            ]
        })
        .collect();
    molio::write_table(
        cli.out_dir.join("pca.csv"),
        &["structure_label", "source_tag", "PC1", "PC2"],
        &out_rows,
    )?;
    println!(
        "pca: {} rows, explained variance {} {}",
        rows.len(),
        model.explained_variance[0],
        model.explained_variance[1]
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_metrics(table: &Path, chi: f64) -> Result<ExitCode> {
    let (header, rows) = molio::read_table(table)?;
    let score_col = header
        .iter()
        .position(|h| h == "score")
        .context("missing score column")?;
    let label_col = header
        .iter()
        .position(|h| h == "label")
        .context("missing label column")?;
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for row in &rows {
        scores.push(row[score_col].parse::<f64>().context("score value")?);
        labels.push(match row[label_col].as_str() {
            "1" | "true" => true,
            "0" | "false" => false,
            other => bail!("bad label `{other}`"),
        });
    }
    println!("NEF {}", analysis::nef(&scores, &labels, chi)?);
    println!("AUC {}", analysis::auc_roc(&scores, &labels)?);
    Ok(ExitCode::SUCCESS)
}
