use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use boxforge::anchors::{canonical_spec, count_parameters, generate_anchors, DetectorSpec, ForkedAnchorSet, HeadKind};
use boxforge::annotation::{parse_corpus, stats, AnnotationCorpus, Category, Page};
use boxforge::error::Error;
use boxforge::eval::{mean_ap, EvalConfig, EvalDetection, EvalResult, Interpolation};
use boxforge::loss::{loss_baseline, loss_fork, LossConfig, PredictionSet};
use boxforge::matcher::{conflict_report, match_forked, match_standard, page_gt_objects, MatcherConfig, RegimeCounts};
use boxforge::postprocess::{detect, PostConfig};
use boxforge::synth::conflict_corpus;

#[derive(Parser)]
#[command(name = "boxforge", version, about = "Anchor assignment, multibox loss and VOC evaluation for comic page detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RegimeArg {
    Standard,
    Fork,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InterpolationArg {
    AllPoint,
    ElevenPoint,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Table,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the anchor grid and print its size
    Anchors {
        /// Path to a detector spec JSON, or the literal "canonical"
        #[arg(long, default_value = "canonical")]
        spec: String,
        /// Write the generated grid as JSON
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Match an annotation corpus against the grid and report unassigned objects
    Assign {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long, value_enum)]
        regime: RegimeArg,
        /// Write the per-page report as JSON
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value = "canonical")]
        spec: String,
        #[arg(long, default_value_t = 0.5)]
        iou_threshold: f64,
        /// Disable the rule that every object claims its best anchor
        #[arg(long)]
        no_force_best_match: bool,
    },
    /// Evaluate the multibox loss on given prediction values
    Loss {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long, default_value = "canonical")]
        spec: String,
        /// Page to evaluate; defaults to the corpus's only page
        #[arg(long)]
        page_id: Option<String>,
        /// Comma-separated per-category weights
        #[arg(long)]
        weights: Option<String>,
        #[arg(long, default_value_t = 3.0)]
        negative_ratio: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decode predictions into detections (JSON lines)
    Detect {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, default_value = "canonical")]
        spec: String,
        /// Corpus holding the page, for pixel denormalization
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long, default_value = "page")]
        page_id: String,
        #[arg(long, default_value_t = 0.01)]
        score_threshold: f64,
        #[arg(long, default_value_t = 0.45)]
        nms_iou: f64,
        #[arg(long, default_value_t = 200)]
        top_k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// PASCAL-VOC AP/mAP evaluation of a detections file
    Eval {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou_threshold: f64,
        #[arg(long, value_enum, default_value_t = InterpolationArg::AllPoint)]
        interpolation: InterpolationArg,
        /// Add a per-volume breakdown
        #[arg(long)]
        per_volume: bool,
        #[arg(long, value_enum, default_value_t = FormatArg::Table)]
        format: FormatArg,
    },
    /// Corpus statistics
    Stats {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        include_irregular: bool,
    },
    /// Parameter counts of the detector heads
    Params {
        #[arg(long, default_value = "canonical")]
        spec: String,
    },
    /// Reproduce the assignment conflict on a built-in synthetic corpus
    DemoConflict {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        pages: usize,
    },
}

fn main() -> ExitCode {
    // clap exits with its own code on usage errors; force exit 1 with the
    // usage text on stderr instead
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            eprintln!("{err}");
            return ExitCode::from(1);
        }
    };
    if let Ok(threads) = std::env::var("BOXFORGE_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Io(err)) => {
            eprintln!("boxforge: io error: {err}");
            ExitCode::from(2)
        }
        Err(err) => {
            eprintln!("boxforge: {err}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> boxforge::Result<()> {
    match cli.command {
        Command::Anchors { spec, dump } => cmd_anchors(&spec, dump.as_deref()),
        Command::Assign {
            annotations,
            regime,
            report,
            spec,
            iou_threshold,
            no_force_best_match,
        } => cmd_assign(
            &annotations,
            regime,
            report.as_deref(),
            &spec,
            iou_threshold,
            !no_force_best_match,
        ),
        Command::Loss {
            pred,
            annotations,
            spec,
            page_id,
            weights,
            negative_ratio,
            out,
        } => cmd_loss(
            &pred,
            &annotations,
            &spec,
            page_id.as_deref(),
            weights.as_deref(),
            negative_ratio,
            out.as_deref(),
        ),
        Command::Detect {
            pred,
            spec,
            annotations,
            page_id,
            score_threshold,
            nms_iou,
            top_k,
            out,
        } => cmd_detect(
            &pred,
            &spec,
            annotations.as_deref(),
            &page_id,
            PostConfig {
                score_threshold,
                nms_iou,
                top_k,
            },
            out.as_deref(),
        ),
        Command::Eval {
            annotations,
            detections,
            iou_threshold,
            interpolation,
            per_volume,
            format,
        } => cmd_eval(
            &annotations,
            &detections,
            EvalConfig {
                iou_threshold,
                interpolation: match interpolation {
                    InterpolationArg::AllPoint => Interpolation::AllPoint,
                    InterpolationArg::ElevenPoint => Interpolation::ElevenPoint,
                },
            },
            per_volume,
            format,
        ),
        Command::Stats {
            annotations,
            include_irregular,
        } => cmd_stats(&annotations, include_irregular),
        Command::Params { spec } => cmd_params(&spec),
        Command::DemoConflict { seed, pages } => cmd_demo_conflict(seed, pages),
    }
}

fn read_file(path: &Path) -> boxforge::Result<String> {
    fs::read_to_string(path).map_err(Error::Io)
}

fn write_file(path: &Path, contents: &str) -> boxforge::Result<()> {
    fs::write(path, contents).map_err(Error::Io)
}

fn load_spec(arg: &str) -> boxforge::Result<DetectorSpec> {
    if arg == "canonical" {
        return Ok(canonical_spec());
    }
    let doc = read_file(Path::new(arg))?;
    let spec: DetectorSpec =
        serde_json::from_str(&doc).map_err(|e| Error::parse(format!("{arg}: {e}")))?;
    spec.validate()?;
    Ok(spec)
}

fn load_corpus(path: &Path) -> boxforge::Result<AnnotationCorpus> {
    parse_corpus(&read_file(path)?)
}

fn load_predictions(path: &Path) -> boxforge::Result<PredictionSet> {
    let doc = read_file(path)?;
    serde_json::from_str(&doc).map_err(|e| Error::parse(format!("{}: {e}", path.display())))
}

fn pick_page<'a>(corpus: &'a AnnotationCorpus, page_id: Option<&str>) -> boxforge::Result<&'a Page> {
    match page_id {
        Some(id) => corpus
            .find_page(id)
            .ok_or_else(|| Error::validation(format!("page {id:?} not found in corpus"))),
        None => {
            let mut pages = corpus.volumes.iter().flat_map(|v| v.pages.iter());
            let first = pages
                .next()
                .ok_or_else(|| Error::validation("corpus has no pages"))?;
            if pages.next().is_some() {
                return Err(Error::validation(
                    "corpus has several pages; choose one with --page-id",
                ));
            }
            Ok(first)
        }
    }
}

fn pretty(value: &impl Serialize) -> String {
    let mut out = serde_json::to_string_pretty(value).expect("value serializes");
    out.push('\n');
    out
}

fn cmd_anchors(spec_arg: &str, dump: Option<&Path>) -> boxforge::Result<()> {
    let spec = load_spec(spec_arg)?;
    let set = generate_anchors(&spec)?;
    println!("K = {}", set.len());
    let blocks: Vec<usize> = (0..spec.feature_maps).map(|i| spec.anchors_in_map(i)).collect();
    println!(
        "per-layer blocks: {}",
        blocks.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
    );
    if let Some(path) = dump {
        write_file(path, &pretty(&set))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct AssignPageRecord {
    page_id: String,
    n_gt: usize,
    n_unassigned: usize,
    per_category: BTreeMap<String, RegimeCounts>,
}

#[derive(Serialize)]
struct AssignReport {
    regime: String,
    pages: Vec<AssignPageRecord>,
    totals: AssignTotals,
}

#[derive(Serialize)]
struct AssignTotals {
    n_gt: usize,
    n_unassigned: usize,
    per_category: BTreeMap<String, RegimeCounts>,
}

fn cmd_assign(
    annotations: &Path,
    regime: RegimeArg,
    report_path: Option<&Path>,
    spec_arg: &str,
    iou_threshold: f64,
    force_best_match: bool,
) -> boxforge::Result<()> {
    let corpus = load_corpus(annotations)?;
    let spec = load_spec(spec_arg)?;
    let anchors = generate_anchors(&spec)?;
    let cfg = MatcherConfig {
        iou_threshold,
        force_best_match,
    };
    let full = conflict_report(&corpus, &anchors, &cfg)?;

    let pick = |std_count: usize, fork_count: usize| match regime {
        RegimeArg::Standard => std_count,
        RegimeArg::Fork => fork_count,
    };
    let pages: Vec<AssignPageRecord> = full
        .pages
        .iter()
        .map(|p| AssignPageRecord {
            page_id: p.page_id.clone(),
            n_gt: p.n_gt,
            n_unassigned: pick(p.standard_unassigned, p.forked_unassigned),
            per_category: p
                .per_category
                .iter()
                .map(|c| {
                    (
                        c.category.clone(),
                        RegimeCounts {
                            n_gt: c.n_gt,
                            n_unassigned: pick(c.standard_unassigned, c.forked_unassigned),
                        },
                    )
                })
                .collect(),
        })
        .collect();
    let report = AssignReport {
        regime: match regime {
            RegimeArg::Standard => "standard".into(),
            RegimeArg::Fork => "fork".into(),
        },
        totals: AssignTotals {
            n_gt: full.total_gt,
            n_unassigned: pick(full.total_standard_unassigned, full.total_forked_unassigned),
            per_category: full
                .per_category
                .iter()
                .map(|c| {
                    (
                        c.category.clone(),
                        RegimeCounts {
                            n_gt: c.n_gt,
                            n_unassigned: pick(c.standard_unassigned, c.forked_unassigned),
                        },
                    )
                })
                .collect(),
        },
        pages,
    };
    println!(
        "{} regime: {} of {} objects unassigned over {} pages",
        report.regime,
        report.totals.n_unassigned,
        report.totals.n_gt,
        report.pages.len()
    );
    if let Some(path) = report_path {
        write_file(path, &pretty(&report))?;
    }
    Ok(())
}

fn cmd_loss(
    pred_path: &Path,
    annotations: &Path,
    spec_arg: &str,
    page_id: Option<&str>,
    weights: Option<&str>,
    negative_ratio: f64,
    out: Option<&Path>,
) -> boxforge::Result<()> {
    let spec = load_spec(spec_arg)?;
    let anchors = generate_anchors(&spec)?;
    let pred = load_predictions(pred_path)?;
    let corpus = load_corpus(annotations)?;
    let page = pick_page(&corpus, page_id)?;
    let gts = page_gt_objects(page);

    let weights = match weights {
        Some(list) => list
            .split(',')
            .map(|w| {
                w.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::validation(format!("bad weight {w:?}: {e}")))
            })
            .collect::<boxforge::Result<Vec<f64>>>()?,
        None if spec.categories == 4 => LossConfig::canonical().weights,
        None => vec![1.0; spec.categories],
    };
    let cfg = LossConfig {
        weights,
        negative_ratio,
        variances: (spec.variances[0], spec.variances[1]),
    };
    let matcher_cfg = MatcherConfig::default();
    let breakdown = match &pred {
        PredictionSet::Fork { .. } => {
            let fork = ForkedAnchorSet::new(anchors.clone(), spec.categories);
            let m = match_forked(&gts, &fork, &matcher_cfg)?;
            loss_fork(&pred, &m, &gts, &anchors, &cfg)?
        }
        PredictionSet::Baseline { .. } => {
            let m = match_standard(&gts, &anchors, &matcher_cfg, spec.categories)?;
            loss_baseline(&pred, &m, &gts, &anchors, &cfg)?
        }
    };
    let rendered = pretty(&breakdown);
    match out {
        Some(path) => write_file(path, &rendered)?,
        None => print!("{rendered}"),
    }
    Ok(())
}

fn cmd_detect(
    pred_path: &Path,
    spec_arg: &str,
    annotations: Option<&Path>,
    page_id: &str,
    cfg: PostConfig,
    out: Option<&Path>,
) -> boxforge::Result<()> {
    let spec = load_spec(spec_arg)?;
    let anchors = generate_anchors(&spec)?;
    let pred = load_predictions(pred_path)?;
    let detections = detect(&pred, &anchors, &cfg, (spec.variances[0], spec.variances[1]))?;

    // detections are normalized; scale to pixels when the page is known
    let (sx, sy) = match annotations {
        Some(path) => {
            let corpus = load_corpus(path)?;
            let page = corpus
                .find_page(page_id)
                .ok_or_else(|| Error::validation(format!("page {page_id:?} not found in corpus")))?;
            (page.width, page.height)
        }
        None => (1.0, 1.0),
    };
    let mut lines = String::new();
    for d in &detections {
        let category = match Category::from_index(d.category) {
            Some(c) => c.name().to_string(),
            None => format!("category_{}", d.category),
        };
        let record = serde_json::json!({
            "page_id": page_id,
            "category": category,
            "score": d.score,
            "box": [d.bbox.x_min * sx, d.bbox.y_min * sy, d.bbox.x_max * sx, d.bbox.y_max * sy],
        });
        lines.push_str(&serde_json::to_string(&record).expect("record serializes"));
        lines.push('\n');
    }
    match out {
        Some(path) => write_file(path, &lines)?,
        None => print!("{lines}"),
    }
    Ok(())
}

fn load_detections(path: &Path) -> boxforge::Result<Vec<EvalDetection>> {
    let doc = read_file(path)?;
    doc.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line)
                .map_err(|e| Error::parse(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn percent(ap: Option<f64>) -> String {
    match ap {
        Some(v) => format!("{:.1}", v * 100.0),
        None => "-".into(),
    }
}

fn cmd_eval(
    annotations: &Path,
    detections: &Path,
    cfg: EvalConfig,
    per_volume: bool,
    format: FormatArg,
) -> boxforge::Result<()> {
    let corpus = load_corpus(annotations)?;
    let dets = load_detections(detections)?;
    let result: EvalResult = mean_ap(&dets, &corpus, &cfg, per_volume)?;
    match format {
        FormatArg::Json => print!("{}", pretty(&result)),
        FormatArg::Table => {
            for warning in &result.warnings {
                eprintln!("warning: {warning}");
            }
            println!(
                "IoU >= {}, {} interpolation",
                result.iou_threshold,
                match result.interpolation {
                    Interpolation::AllPoint => "all-point",
                    Interpolation::ElevenPoint => "eleven-point",
                }
            );
            println!("{:<24}{:>8}{:>8}{:>8}{:>8}{:>8}", "", "mAP", "frame", "text", "face", "body");
            if let Some(volumes) = &result.per_volume {
                for v in volumes {
                    print_eval_row(&v.title, v.map, &v.per_category);
                }
            }
            print_eval_row("total", result.map, &result.per_category);
        }
    }
    Ok(())
}

fn print_eval_row(label: &str, map: f64, per_category: &[Option<f64>]) {
    println!(
        "{:<24}{:>8}{:>8}{:>8}{:>8}{:>8}",
        label,
        format!("{:.1}", map * 100.0),
        percent(per_category[0]),
        percent(per_category[1]),
        percent(per_category[2]),
        percent(per_category[3]),
    );
}

fn cmd_stats(annotations: &Path, include_irregular: bool) -> boxforge::Result<()> {
    let corpus = load_corpus(annotations)?;
    let s = stats(&corpus, include_irregular);
    print!("{}", pretty(&s));
    Ok(())
}

fn cmd_params(spec_arg: &str) -> boxforge::Result<()> {
    let spec = load_spec(spec_arg)?;
    let baseline = count_parameters(&spec, HeadKind::Baseline)?;
    let fork = count_parameters(&spec, HeadKind::Fork)?;
    let naive = count_parameters(&spec, HeadKind::NaiveReplication)?;
    println!("baseline            {baseline:>12}  ({:.1} M)", baseline as f64 / 1e6);
    println!("fork                {fork:>12}  ({:.1} M)", fork as f64 / 1e6);
    println!("naive replication   {naive:>12}  ({:.1} M)", naive as f64 / 1e6);
    println!("fork - baseline     {:>12}  ({:.1} M)", fork - baseline, (fork - baseline) as f64 / 1e6);
    Ok(())
}

fn cmd_demo_conflict(seed: u64, pages: usize) -> boxforge::Result<()> {
    let corpus = conflict_corpus(seed, pages);
    let anchors = generate_anchors(&canonical_spec())?;
    let report = conflict_report(&corpus, &anchors, &MatcherConfig::default())?;
    println!(
        "synthetic corpus: {} pages, {} objects (one frame and one identical body per page)",
        report.pages.len(),
        report.total_gt
    );
    println!();
    println!("{:<10}{:>12}{:>8}{:>8}{:>8}{:>8}", "regime", "unassigned", "frame", "text", "face", "body");
    for (name, total, pick) in [
        (
            "standard",
            report.total_standard_unassigned,
            &(|c: &boxforge::matcher::CategoryConflict| c.standard_unassigned)
                as &dyn Fn(&boxforge::matcher::CategoryConflict) -> usize,
        ),
        (
            "forked",
            report.total_forked_unassigned,
            &(|c: &boxforge::matcher::CategoryConflict| c.forked_unassigned),
        ),
    ] {
        println!(
            "{:<10}{:>12}{:>8}{:>8}{:>8}{:>8}",
            name,
            total,
            pick(&report.per_category[0]),
            pick(&report.per_category[1]),
            pick(&report.per_category[2]),
            pick(&report.per_category[3]),
        );
    }
    println!();
    println!(
        "standard matching leaves {} of {} objects without an anchor; forked matching leaves {}",
        report.total_standard_unassigned, report.total_gt, report.total_forked_unassigned
    );
    Ok(())
}
