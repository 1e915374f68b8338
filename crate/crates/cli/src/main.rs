use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use attnalign_core::bpe::{debpe, learn_joint_bpe, BpeModel};
use attnalign_core::data::{
    generate_synthetic_corpus, read_alignment_file, read_gold_file, read_lines, tokenize, write_alignment_file,
    write_gold_file, write_lines, write_string_atomic, ExperimentConfig, ParallelCorpus, PermutationScheme,
    SyntheticSpec,
};
use attnalign_core::eval::{aer, corpus_bleu, GoldAlignment};
use attnalign_core::extraction::{symmetrize_grow_diagonal, AverageScope, ExtractionMethod};
use attnalign_core::report::{
    compare_systems, comparison_csv, epoch_csv, epoch_svg, layer_csv, parse_epoch_csv, per_layer_aer, EpochSeries,
};
use attnalign_core::statistical::{align_corpus_bidirectional, AlignerConfig};
use attnalign_core::training::{run_experiment, word_alignments, EvalData, ModelDir, PreparedCorpus};
use attnalign_core::{Error, Result};

#[derive(Parser)]
#[command(name = "attnalign", version, about = "Word alignment from Transformer attention")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic word-for-word corpus with gold alignments.
    Synthesize {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 2000)]
        size: usize,
        #[arg(long, default_value_t = 50)]
        vocab: usize,
        #[arg(long, default_value_t = 4)]
        min_len: usize,
        #[arg(long, default_value_t = 9)]
        max_len: usize,
        /// `identity`, `swap` or `window:W`.
        #[arg(long, default_value = "window:3")]
        scheme: String,
        /// Writes PREFIX.src, PREFIX.tgt and PREFIX.gold.
        #[arg(long)]
        prefix: PathBuf,
    },
    /// Split punctuation off words, one sentence per line.
    Tokenize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Learn joint BPE merges from a source and a target file.
    LearnBpe {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value_t = 500)]
        merges: usize,
        #[arg(long)]
        codes: PathBuf,
    },
    /// Segment a text file with learned merges.
    ApplyBpe {
        #[arg(long)]
        codes: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// IBM1 + HMM alignment in both directions, merged with grow-diagonal.
    IbmAlign(IbmArgs),
    /// Train a forward and a reverse model from a configuration file.
    Train(TrainArgs),
    /// Extract word alignments from trained models.
    Align(AlignArgs),
    /// Merge two directional alignment files.
    Symmetrize {
        /// Source-to-target alignments.
        #[arg(long)]
        forward: PathBuf,
        /// Target-to-source alignments, target index first.
        #[arg(long)]
        reverse: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Also add unaligned-word links from the union.
        #[arg(long)]
        final_step: bool,
    },
    /// Alignment error rate against gold alignments.
    ScoreAer {
        #[arg(long)]
        hypothesis: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Gold file uses 1-based indices.
        #[arg(long)]
        one_indexed: bool,
    },
    /// Translate with beam search.
    Translate {
        #[arg(long)]
        model_dir: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 5)]
        beam: usize,
        /// Use the reverse model.
        #[arg(long)]
        reverse: bool,
    },
    /// Corpus BLEU of a hypothesis file against one reference file.
    ScoreBleu {
        #[arg(long)]
        hypothesis: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, default_value_t = 4)]
        max_order: usize,
        #[arg(long)]
        smooth: bool,
    },
    /// Tables and charts.
    #[command(subcommand)]
    Report(ReportCommand),
}

#[derive(Args)]
struct IbmArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    /// Symmetrized output.
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    forward_output: Option<PathBuf>,
    #[arg(long)]
    reverse_output: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    ibm1_iterations: usize,
    #[arg(long, default_value_t = 5)]
    hmm_iterations: usize,
    #[arg(long)]
    final_step: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override a configuration key, `key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Held-out source text scored after every epoch.
    #[arg(long, requires_all = ["eval_target", "eval_gold"])]
    eval_source: Option<PathBuf>,
    #[arg(long)]
    eval_target: Option<PathBuf>,
    #[arg(long)]
    eval_gold: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    LayerAverage,
    AllAverage,
    AlignmentHead,
}

#[derive(Args)]
struct AlignArgs {
    #[arg(long)]
    model_dir: PathBuf,
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value = "layer-average")]
    method: Method,
    /// 1-based decoder layer; defaults to the penultimate one.
    #[arg(long)]
    layer: Option<usize>,
    /// 1-based head for `alignment-head`.
    #[arg(long, default_value_t = 1)]
    head: usize,
    /// Read the head from a pass without the future mask.
    #[arg(long)]
    full_context: bool,
    /// Only use the forward model.
    #[arg(long)]
    no_symmetrize: bool,
    #[arg(long)]
    final_step: bool,
}

#[derive(Subcommand)]
enum ReportCommand {
    /// AER of every decoder layer and of the all-layer average.
    Layers {
        #[arg(long)]
        model_dir: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        one_indexed: bool,
        #[arg(long)]
        no_symmetrize: bool,
        #[arg(long)]
        output: PathBuf,
    },
    /// Side-by-side scores of several alignment files.
    Compare {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        one_indexed: bool,
        /// `name=path`, repeated.
        #[arg(long = "system", value_name = "NAME=PATH", required = true)]
        systems: Vec<String>,
        /// System the others are tested against.
        #[arg(long)]
        reference: Option<String>,
        #[arg(long)]
        output: PathBuf,
    },
    /// AER-by-epoch series as CSV and SVG.
    Epochs {
        /// `name=epochs.csv`, repeated; every series in the file is kept
        /// and prefixed with `name`.
        #[arg(long = "run", value_name = "NAME=PATH", required = true)]
        runs: Vec<String>,
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        svg: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn name_path(spec: &str) -> Result<(String, PathBuf)> {
    match spec.split_once('=') {
        Some((n, p)) if !n.is_empty() && !p.is_empty() => Ok((n.to_string(), PathBuf::from(p))),
        _ => Err(Error::Parameter(format!("expected NAME=PATH, got '{spec}'"))),
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))
}

fn scheme(s: &str) -> Result<PermutationScheme> {
    match s {
        "identity" => Ok(PermutationScheme::Identity),
        "swap" => Ok(PermutationScheme::AdjacentSwap),
        _ => match s.strip_prefix("window:").and_then(|w| w.parse().ok()) {
            Some(w) if w > 0 => Ok(PermutationScheme::Windowed(w)),
            _ => Err(Error::Parameter(format!("unknown permutation scheme '{s}'"))),
        },
    }
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synthesize { seed, size, vocab, min_len, max_len, scheme: name, prefix } => {
            if vocab < 2 || min_len == 0 || min_len > max_len {
                return Err(Error::Parameter("need vocab >= 2 and 1 <= min_len <= max_len".into()));
            }
            let spec = SyntheticSpec { seed, size, vocab, min_len, max_len, scheme: scheme(&name)? };
            let s = generate_synthetic_corpus(&spec);
            write_lines(&with_suffix(&prefix, ".src"), &s.corpus.source)?;
            write_lines(&with_suffix(&prefix, ".tgt"), &s.corpus.target)?;
            write_gold_file(&with_suffix(&prefix, ".gold"), &s.gold)
        }
        Command::Tokenize { input, output } => {
            let lines: Vec<String> = read_lines(&input)?.iter().map(|l| tokenize(l)).collect();
            write_lines(&output, &lines)
        }
        Command::LearnBpe { source, target, merges, codes } => {
            let model = learn_joint_bpe(&read_lines(&source)?, &read_lines(&target)?, merges)?;
            eprintln!("learned {} merges", model.num_merges());
            write_string_atomic(&codes, &model.to_merge_file())
        }
        Command::ApplyBpe { codes, input, output } => {
            let model = BpeModel::from_merge_file(&read_text(&codes)?)?;
            let lines: Vec<String> = read_lines(&input)?.iter().map(|l| model.apply(l).tokens.join(" ")).collect();
            write_lines(&output, &lines)
        }
        Command::IbmAlign(a) => ibm_align(a),
        Command::Train(a) => train(a),
        Command::Align(a) => align(a),
        Command::Symmetrize { forward, reverse, output, final_step } => {
            let f = read_alignment_file(&forward, false)?;
            let r = read_alignment_file(&reverse, false)?;
            if f.len() != r.len() {
                return Err(Error::Data(format!("{} forward lines but {} reverse lines", f.len(), r.len())));
            }
            let merged = f
                .iter()
                .zip(&r)
                .map(|(f, r)| {
                    // Pharaoh lines carry no sentence lengths; size both to cover every link.
                    let r = r.transposed();
                    let (j, i) = (f.src_len().max(r.src_len()), f.tgt_len().max(r.tgt_len()));
                    symmetrize_grow_diagonal(&f.clone().with_lengths(j, i)?, &r.with_lengths(j, i)?, final_step)
                })
                .collect::<Result<Vec<_>>>()?;
            write_alignment_file(&output, &merged)
        }
        Command::ScoreAer { hypothesis, gold, one_indexed } => {
            let report = aer(&read_alignment_file(&hypothesis, false)?, &read_gold_file(&gold, one_indexed)?)?;
            let c = report.corpus;
            println!("AER {:.3}", 100.0 * report.aer());
            println!("precision {:.3}", 100.0 * report.precision());
            println!("recall {:.3}", 100.0 * report.recall());
            println!("links hyp={} sure={} possible={} hit_sure={} hit_possible={}", c.hypothesis, c.sure, c.possible, c.hit_sure, c.hit_possible);
            Ok(())
        }
        Command::Translate { model_dir, input, output, beam, reverse } => {
            let dir = ModelDir::load(&model_dir)?;
            let model = if reverse {
                dir.reverse.as_ref().ok_or_else(|| Error::Data(format!("{} has no reverse model", model_dir.display())))?
            } else {
                &dir.forward
            };
            let pre = &dir.preprocessing;
            let mut out = Vec::new();
            for line in read_lines(&input)? {
                let ids = pre.vocab.encode(&pre.bpe.apply(&line).tokens);
                let max_len = (2 * ids.len() + 10).min(model.config().max_positions - 1);
                let (hyp, _) = model.beam_decode(&ids, beam, max_len)?;
                out.push(debpe(&pre.vocab.decode(hyp.content()), pre.bpe.marker()));
            }
            write_lines(&output, &out)
        }
        Command::ScoreBleu { hypothesis, reference, max_order, smooth } => {
            let b = corpus_bleu(&read_lines(&hypothesis)?, &read_lines(&reference)?, max_order, smooth)?;
            let p: Vec<String> = b.precisions.iter().map(|p| format!("{:.1}", 100.0 * p)).collect();
            println!("BLEU {:.2} ({}) BP {:.3} hyp_len {} ref_len {}", 100.0 * b.score, p.join("/"), b.brevity_penalty, b.hyp_len, b.ref_len);
            Ok(())
        }
        Command::Report(r) => report(r),
    }
}

fn ibm_align(a: IbmArgs) -> Result<()> {
    let corpus = ParallelCorpus::read(&a.source, &a.target)?;
    let config = AlignerConfig {
        ibm1_iterations: a.ibm1_iterations,
        hmm_iterations: a.hmm_iterations,
        final_step: a.final_step,
        ..AlignerConfig::default()
    };
    let out = align_corpus_bidirectional(&corpus, &config)?;
    write_alignment_file(&a.output, &out.symmetrized)?;
    if let Some(p) = &a.forward_output {
        write_alignment_file(p, &out.forward)?;
    }
    if let Some(p) = &a.reverse_output {
        let rev: Vec<_> = out.reverse.iter().map(|r| r.transposed()).collect();
        write_alignment_file(p, &rev)?;
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut config = ExperimentConfig::read(&a.config)?;
    for o in &a.overrides {
        let Some((k, v)) = o.split_once('=') else {
            return Err(Error::Parameter(format!("expected KEY=VALUE, got '{o}'")));
        };
        config.set(k.trim(), v.trim(), 0)?;
    }
    config.validate()?;
    eprint!("{}", config.resolved());
    let eval = match (&a.eval_source, &a.eval_target, &a.eval_gold) {
        (Some(s), Some(t), Some(g)) => {
            Some(EvalData { corpus: ParallelCorpus::read(s, t)?, gold: read_gold_file(g, false)? })
        }
        _ => None,
    };
    let outcome = run_experiment(&config, eval.as_ref())?;
    for (name, run) in [("forward", &outcome.models.forward), ("reverse", &outcome.models.reverse)] {
        if let Some(last) = run.epochs.last() {
            eprintln!("{name}: {} epochs, final train loss {:.4}", last.epoch, last.train_loss);
        }
    }
    if config.output_dir.is_none() {
        eprintln!("no output_dir configured; models were not saved");
    }
    Ok(())
}

fn extraction_method(a: &AlignArgs, n_layers: usize) -> ExtractionMethod {
    let layer = a.layer.unwrap_or(n_layers.saturating_sub(1).max(1));
    match a.method {
        Method::LayerAverage => ExtractionMethod::LayerAverage(AverageScope::Layer(layer)),
        Method::AllAverage => ExtractionMethod::LayerAverage(AverageScope::All),
        Method::AlignmentHead => ExtractionMethod::AlignmentHead { layer, head: a.head, full_context: a.full_context },
    }
}

fn align(a: AlignArgs) -> Result<()> {
    let dir = ModelDir::load(&a.model_dir)?;
    let corpus = ParallelCorpus::read(&a.source, &a.target)?;
    let prepared = PreparedCorpus::new(&corpus, &dir.preprocessing);
    let method = extraction_method(&a, dir.forward.config().n_layers);
    let forward = word_alignments(&dir.forward, &prepared, method)?;
    let out = match (&dir.reverse, a.no_symmetrize) {
        (Some(rev), false) => {
            let backward = word_alignments(rev, &prepared.reversed(), method)?;
            forward
                .iter()
                .zip(&backward)
                .map(|(f, b)| symmetrize_grow_diagonal(f, &b.transposed(), a.final_step))
                .collect::<Result<Vec<_>>>()?
        }
        _ => forward,
    };
    write_alignment_file(&a.output, &out)
}

fn report(r: ReportCommand) -> Result<()> {
    match r {
        ReportCommand::Layers { model_dir, source, target, gold, one_indexed, no_symmetrize, output } => {
            let dir = ModelDir::load(&model_dir)?;
            let corpus = ParallelCorpus::read(&source, &target)?;
            let gold = read_gold_file(&gold, one_indexed)?;
            let prepared = PreparedCorpus::new(&corpus, &dir.preprocessing);
            let reverse = if no_symmetrize { None } else { dir.reverse.as_ref() };
            let rows = per_layer_aer(&dir.forward, reverse, &prepared, &gold)?;
            write_string_atomic(&output, &layer_csv(&rows)?)
        }
        ReportCommand::Compare { gold, one_indexed, systems, reference, output } => {
            let gold: Vec<GoldAlignment> = read_gold_file(&gold, one_indexed)?;
            let mut scored = Vec::new();
            for spec in &systems {
                let (name, path) = name_path(spec)?;
                scored.push((name, aer(&read_alignment_file(&path, false)?, &gold)?));
            }
            let reference = match reference {
                Some(name) => Some(
                    scored
                        .iter()
                        .position(|(n, _)| *n == name)
                        .ok_or_else(|| Error::Parameter(format!("reference '{name}' is not among the systems")))?,
                ),
                None => None,
            };
            write_string_atomic(&output, &comparison_csv(&compare_systems(scored, reference)?)?)
        }
        ReportCommand::Epochs { runs, csv, svg } => {
            let mut series: Vec<EpochSeries> = Vec::new();
            for spec in &runs {
                let (name, path) = name_path(spec)?;
                for s in parse_epoch_csv(&read_text(&path)?)? {
                    series.push(EpochSeries { name: format!("{name} {}", s.name), points: s.points });
                }
            }
            write_string_atomic(&csv, &epoch_csv(&series)?)?;
            write_string_atomic(&svg, &epoch_svg(&series))
        }
    }
}
