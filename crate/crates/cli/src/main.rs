use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use tissue_core::eval::analysis::{contribution_scores, mean_activation_images, DEFAULT_FRACTION, DEFAULT_TOP_DIMS};
use tissue_core::eval::cv::{build_table, evaluate_table_with, load_patches, patch_counts, run_cv_with, CvConfig, EvalConfig};
use tissue_core::eval::labelmap::predict_label_map;
use tissue_core::folds::{read_counts_csv, read_folds_csv, render_folds_csv, write_counts_csv};
use tissue_core::model::{load_manifest, load_rgb, save_mask, save_rgb, DatasetManifest};
use tissue_core::{
    balance_folds, synthetic, train_bundle, Descriptor, EvalReport, Exec, FeatureTable, FeatureVector, Featurizer,
    ImageOrder, ModelBundle, SvmParams,
};

#[derive(Parser)]
#[command(name = "tissue", version, about = "Chronic-wound tissue classification on image patches")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Seed for SVM coordinate order and synthetic data.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Patch side in pixels.
    #[arg(long, global = true, default_value_t = 20)]
    patch_side: u32,
    /// Number of cross-validation folds.
    #[arg(long, global = true, default_value_t = 3)]
    k: usize,
    /// PCA components, used for network descriptors unless overridden.
    #[arg(long, global = true, default_value_t = 18)]
    pca_m: usize,
    /// Run every stage on one thread.
    #[arg(long, global = true)]
    sequential: bool,
}

impl Global {
    fn exec(&self) -> Exec {
        if self.sequential {
            Exec::Sequential
        } else {
            Exec::default()
        }
    }
}

#[derive(Args, Clone)]
struct SvmFlags {
    /// Soft-margin penalty.
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    /// Stopping tolerance on the projected gradient.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Maximum coordinate-descent epochs.
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
}

impl SvmFlags {
    fn params(&self, seed: u64) -> SvmParams {
        SvmParams {
            c: self.c,
            tol: self.tol,
            max_iter: self.max_iter,
            seed,
        }
    }
}

#[derive(Args, Clone, Copy)]
struct PcaFlags {
    /// Always reduce with PCA.
    #[arg(long, conflicts_with = "no_pca")]
    pca: bool,
    /// Never reduce with PCA.
    #[arg(long)]
    no_pca: bool,
}

impl PcaFlags {
    fn components(self, network: bool, m: usize) -> Option<usize> {
        match (self.pca, self.no_pca) {
            (true, _) => Some(m),
            (_, true) => None,
            _ => network.then_some(m),
        }
    }
}

#[derive(Args, Clone)]
struct DescriptorFlags {
    /// rgb, hsv, lbp, hsv+lbp, fc6, fc7, fc8, stub6, stub7 or stub8.
    #[arg(long, short)]
    descriptor: Descriptor,
    /// Directory holding alexnet_fc{6,7,8}.onnx and alexnet_meta.json.
    #[arg(long)]
    model_dir: Option<PathBuf>,
}

impl DescriptorFlags {
    fn featurizer(&self) -> Result<Featurizer> {
        Ok(Featurizer::new(self.descriptor, self.model_dir.as_deref())?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Count labeled patches per class for every manifest image.
    Patchify {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assign whole images to balanced folds.
    Folds {
        #[arg(long)]
        counts: PathBuf,
        /// descending or given.
        #[arg(long, default_value = "descending")]
        order: ImageOrder,
        #[arg(long)]
        out: PathBuf,
    },
    /// Featurize every labeled patch into a feature cache.
    Extract {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        descriptor: DescriptorFlags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validate a feature cache under a fold assignment.
    Eval {
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        folds: PathBuf,
        #[command(flatten)]
        pca: PcaFlags,
        #[command(flatten)]
        svm: SvmFlags,
        /// JSON report.
        #[arg(long)]
        out: PathBuf,
        /// Plain-text report.
        #[arg(long)]
        text: Option<PathBuf>,
    },
    /// Patchify, balance, extract and evaluate in one process.
    Run {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        descriptor: DescriptorFlags,
        #[arg(long, default_value = "descending")]
        order: ImageOrder,
        #[command(flatten)]
        pca: PcaFlags,
        #[command(flatten)]
        svm: SvmFlags,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        text: Option<PathBuf>,
    },
    /// Fit PCA and SVM on a whole feature cache and save a model bundle.
    Train {
        #[arg(long)]
        cache: PathBuf,
        /// Descriptor the cache was extracted with.
        #[arg(long, short)]
        descriptor: Descriptor,
        #[command(flatten)]
        pca: PcaFlags,
        #[command(flatten)]
        svm: SvmFlags,
        /// Bundle directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Label an image patch by patch and write an overlay.
    Predict {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        model_dir: Option<PathBuf>,
        /// Overlay PNG, same size as the input.
        #[arg(long)]
        out: PathBuf,
        /// Colorized label map PNG over the patch grid.
        #[arg(long)]
        label_map: Option<PathBuf>,
        /// Raw class-code PNG over the patch grid.
        #[arg(long)]
        codes: Option<PathBuf>,
    },
    /// Excitation and inhibition mean patches for the top features.
    MeanImages {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        descriptor: DescriptorFlags,
        /// Rank features by this bundle's weights instead of variance.
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_TOP_DIMS)]
        top_dims: usize,
        #[arg(long, default_value_t = DEFAULT_FRACTION)]
        fraction: f64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic color-texture dataset with a manifest.
    Synth {
        #[arg(long, default_value_t = 3)]
        per_class: u32,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn manifest_of(path: &Path, g: &Global) -> Result<DatasetManifest> {
    let mut m = load_manifest(path)?;
    m.patch_side = g.patch_side;
    Ok(m)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn emit_report(report: &EvalReport, out: &Path, text: Option<&Path>) -> Result<()> {
    write(out, report.to_json() + "\n")?;
    let rendered = report.to_text();
    if let Some(t) = text {
        write(t, &rendered)?;
    }
    print!("{rendered}");
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    let exec = g.exec();
    match &cli.command {
        Command::Patchify { manifest, out } => {
            let m = manifest_of(manifest, g)?;
            let images = load_patches(&m, g.patch_side, exec)?;
            let counts = patch_counts(&m, &images);
            write_counts_csv(out, &counts)?;
            let total: u64 = counts.iter().map(|c| c.total()).sum();
            eprintln!("{} images, {total} labeled patches", counts.len());
        }
        Command::Folds { counts, order, out } => {
            let counts = read_counts_csv(counts)?;
            let assignment = balance_folds(&counts, g.k, *order)?;
            write(out, render_folds_csv(&assignment))?;
            eprintln!("sigma {:.6}", assignment.cost.total_sd);
        }
        Command::Extract {
            manifest,
            descriptor,
            out,
        } => {
            let m = manifest_of(manifest, g)?;
            let featurizer = descriptor.featurizer()?;
            let images = load_patches(&m, g.patch_side, exec)?;
            let table = build_table(&m, &images, &featurizer, exec)?;
            table.save(out)?;
            eprintln!("{} rows of dim {}", table.rows.len(), table.dim);
        }
        Command::Eval {
            cache,
            folds,
            pca,
            svm,
            out,
            text,
        } => {
            let table = FeatureTable::load(cache)?;
            let folds = read_folds_csv(folds)?;
            let config = EvalConfig {
                k: g.k,
                pca_m: pca.components(table.tag.is_dnn(), g.pca_m),
                svm: svm.params(g.seed),
            };
            let report = evaluate_table_with(&table, &folds, &config, exec)?;
            emit_report(&report, out, text.as_deref())?;
        }
        Command::Run {
            manifest,
            descriptor,
            order,
            pca,
            svm,
            out,
            text,
        } => {
            let m = manifest_of(manifest, g)?;
            let featurizer = descriptor.featurizer()?;
            let config = CvConfig {
                descriptor: descriptor.descriptor,
                patch_side: g.patch_side,
                order: *order,
                eval: EvalConfig {
                    k: g.k,
                    pca_m: pca.components(descriptor.descriptor.pca_by_default(), g.pca_m),
                    svm: svm.params(g.seed),
                },
            };
            let run = run_cv_with(&m, &featurizer, &config, exec)?;
            emit_report(&run.report, out, text.as_deref())?;
        }
        Command::Train {
            cache,
            descriptor,
            pca,
            svm,
            out,
        } => {
            let table = FeatureTable::load(cache)?;
            let pca_m = pca.components(descriptor.pca_by_default(), g.pca_m);
            let bundle = train_bundle(&table, *descriptor, g.patch_side, pca_m, &svm.params(g.seed), exec)?;
            bundle.save(out)?;
        }
        Command::Predict {
            image,
            bundle,
            model_dir,
            out,
            label_map,
            codes,
        } => {
            let bundle = ModelBundle::load(bundle)?;
            let featurizer = Featurizer::new(bundle.descriptor, model_dir.as_deref())?;
            let pixels = load_rgb(image)?;
            let map = predict_label_map(&pixels, &bundle, &featurizer, exec)?;
            save_rgb(out, &map.overlay)?;
            if let Some(p) = label_map {
                save_rgb(p, &map.colorized())?;
            }
            if let Some(p) = codes {
                save_mask(p, &map.codes)?;
            }
        }
        Command::MeanImages {
            manifest,
            descriptor,
            bundle,
            top_dims,
            fraction,
            out,
        } => {
            let m = manifest_of(manifest, g)?;
            let featurizer = descriptor.featurizer()?;
            let patches: Vec<_> = load_patches(&m, g.patch_side, exec)?
                .into_iter()
                .flat_map(|ip| ip.patches)
                .collect();
            let features: Vec<FeatureVector> = exec.try_map(&patches, |p| featurizer.featurize(&p.patch))?;
            let scores = match bundle {
                Some(dir) => {
                    let b = ModelBundle::load(dir)?;
                    if b.descriptor.tag() != descriptor.descriptor.tag() {
                        bail!("bundle was trained on {}, not {}", b.descriptor, descriptor.descriptor);
                    }
                    Some(contribution_scores(&b.svm, b.pca.as_ref()))
                }
                None => None,
            };
            let pairs = mean_activation_images(&patches, &features, *top_dims, *fraction, scores.as_deref())?;
            fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
            let mut index = String::from("rank,feature_index,score,support_count\n");
            for (rank, p) in pairs.iter().enumerate() {
                save_rgb(&out.join(format!("{rank:02}_f{}_excitation.png", p.feature_index)), &p.excitation.to_rgb())?;
                save_rgb(&out.join(format!("{rank:02}_f{}_inhibition.png", p.feature_index)), &p.inhibition.to_rgb())?;
                index.push_str(&format!("{rank},{},{},{}\n", p.feature_index, p.score, p.support_count));
            }
            write(&out.join("features.csv"), index)?;
        }
        Command::Synth { per_class, out } => {
            let images = synthetic::synthetic_dataset(*per_class, g.seed);
            let m = synthetic::write_dataset(out, &images)?;
            eprintln!("wrote {} images to {}", m.entries.len(), out.display());
        }
    }
    Ok(())
}
