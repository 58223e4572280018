//! Loading external data and running experiment grids on a thread pool.

use std::path::Path;

use rayon::prelude::*;
use transmat::data::{make_rotated_domain, ImageDataset};
use transmat::models::Model;
use transmat::pipeline::{
    build_references, grid, prepare_data, run_grid_point, Domain, ExperimentConfig, ExperimentContext, ExperimentData,
    ExperimentReport, Task,
};

use crate::error::{CliError, CliResult};
use crate::idx::read_image_dataset;
use crate::seqfile::read_sequences;

pub const IMAGE_FILE: &str = "train-images-idx3-ubyte";
pub const LABEL_FILE: &str = "train-labels-idx1-ubyte";
pub const SOURCE_FILE: &str = "a.seq";
pub const TARGET_FILE: &str = "b.seq";

fn take(ds: &ImageDataset, from: usize, count: usize) -> CliResult<ImageDataset> {
    if from + count > ds.len() {
        return Err(CliError::Format(format!("need {} images, the file holds {}", from + count, ds.len())));
    }
    Ok(ds.subset(&(from..from + count).collect::<Vec<_>>()))
}

/// Reads both domains from `dir`. Images: an IDX image/label pair whose
/// first `count_a` entries form A and the next `count_b`, rotated, form B.
/// Sequences: `a.seq` and `b.seq`.
pub fn load_data(cfg: &ExperimentConfig, dir: &Path) -> CliResult<ExperimentData> {
    Ok(match cfg.task {
        Task::RotatedImages => {
            let all = read_image_dataset(&dir.join(IMAGE_FILE), &dir.join(LABEL_FILE), "A")?;
            let a = take(&all, 0, cfg.images.count_a)?;
            let b = make_rotated_domain(&take(&all, cfg.images.count_a, cfg.images.count_b)?);
            ExperimentData { a: Domain::Images(a), b: Domain::Images(b) }
        }
        Task::ToySequences | Task::LaneChange => ExperimentData {
            a: Domain::Sequences(read_sequences(&dir.join(SOURCE_FILE))?),
            b: Domain::Sequences(read_sequences(&dir.join(TARGET_FILE))?),
        },
    })
}

fn pool(jobs: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Format(format!("thread pool: {e}")))
}

/// Runs the grid with up to `jobs` grid points at once. The report is
/// assembled in grid order after every point has finished, so it does not
/// depend on `jobs`.
pub fn run(
    cfg: &ExperimentConfig,
    data: Option<&ExperimentData>,
    base: Option<&Model>,
    jobs: usize,
) -> CliResult<ExperimentReport> {
    cfg.validate()?;
    let pool = pool(jobs)?;
    pool.install(|| {
        let contexts = cfg
            .seeds
            .par_iter()
            .map(|&seed| {
                let generated;
                let data = match data {
                    Some(d) => d,
                    None => {
                        generated = prepare_data(cfg, seed)?;
                        &generated
                    }
                };
                let ctx = ExperimentContext::new(cfg, data, seed, base.cloned())?;
                let refs = build_references(cfg, &ctx)?;
                Ok((ctx, refs))
            })
            .collect::<CliResult<Vec<_>>>()?;
        let points = grid(cfg);
        let results: Vec<_> = points
            .par_iter()
            .map(|&(seed, b, method)| {
                let k = cfg.seeds.iter().position(|&s| s == seed).expect("seed from grid");
                run_grid_point(cfg, &contexts[k].0, method, b)
            })
            .collect();
        let mut report = ExperimentReport { config: cfg.clone(), rows: Vec::new(), failures: Vec::new() };
        let mut results = points.into_iter().zip(results).peekable();
        for (ctx, refs) in contexts {
            report.rows.extend(refs);
            while let Some(((seed, b, method), r)) = results.next_if(|((s, _, _), _)| *s == ctx.seed) {
                match r {
                    Ok(row) => report.rows.push(row),
                    Err(e) => report.failures.push((format!("seed={seed} b={b} method={}", method.name()), e)),
                }
            }
        }
        Ok(report)
    })
}
