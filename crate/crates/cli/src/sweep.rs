//! Sweep execution: episode enumeration, seed splitting, parallel runs and
//! the per-preset summary.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use resicomp::corpus;
use resicomp::image::Image;
use resicomp::partition::splitmix64;
use resicomp::pipeline::{run_episode, Channel, Episode, Outcome, Session, CSV_HEADER};

use crate::config::{channel, ImageSource, Scheme, SweepSpec};
use crate::error::{CliError, CliResult};
use crate::load_prior;

/// Per-episode trace seed:
/// `s(s(s(s(master) ^ image) ^ repetition) ^ preset)` with `s` the
/// SplitMix64 finalizer. Indices are positions in the image list, the
/// repetition range and the preset list. Every scheme sees the same seed
/// for a given (image, repetition, preset), so schemes are compared on
/// identical channel realisations when their packet counts agree.
pub fn episode_seed(master: u64, image: usize, repetition: usize, preset: usize) -> u64 {
    let mut h = splitmix64(master);
    h = splitmix64(h ^ image as u64);
    h = splitmix64(h ^ repetition as u64);
    splitmix64(h ^ preset as u64)
}

/// Loads the images named by `source` with their ids.
pub fn load_images(source: &ImageSource) -> CliResult<Vec<(u64, Image)>> {
    match source {
        ImageSource::Corpus(n) => Ok((0..*n as u64)
            .map(|i| (i, corpus::image(i, corpus::HEIGHT, corpus::WIDTH)))
            .collect()),
        ImageSource::Dir(dir) => {
            let mut paths: Vec<PathBuf> = fs::read_dir(dir)
                .map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    matches!(
                        p.extension().and_then(|e| e.to_str()),
                        Some("pgm" | "ppm" | "pnm")
                    )
                })
                .collect();
            paths.sort();
            if paths.is_empty() {
                return Err(CliError::Validation(format!(
                    "images: no .pgm/.ppm files in {}",
                    dir.display()
                )));
            }
            paths
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    Image::read(p)
                        .map(|img| (i as u64, img))
                        .map_err(|e| CliError::Io(format!("{}: {e}", p.display())))
                })
                .collect()
        }
    }
}

/// Aggregate over the episodes of one (preset, scheme) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub preset: String,
    pub scheme: String,
    pub episodes: usize,
    pub mean_psnr_db: f64,
    pub failure_ratio: f64,
}

pub const SUMMARY_HEADER: &str = "loss_preset,scheme,episodes,mean_psnr_db,failure_ratio";

impl SummaryRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.4},{:.4}",
            self.preset, self.scheme, self.episodes, self.mean_psnr_db, self.failure_ratio
        )
    }
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    /// Ordered by image, repetition, preset, scheme.
    pub episodes: Vec<(String, Episode)>,
    /// Ordered by preset then scheme, in config order.
    pub summary: Vec<SummaryRow>,
}

struct Job {
    image: usize,
    repetition: usize,
    preset: usize,
    scheme: usize,
}

/// Runs every episode of `spec` on at most `jobs` threads. The result does
/// not depend on `jobs`.
pub fn run_sweep(spec: &SweepSpec, jobs: usize) -> CliResult<SweepResult> {
    let images = load_images(&spec.images)?;
    let schemes: Vec<Scheme> = spec.schemes()?;
    let channels: Vec<Channel> = spec
        .presets
        .iter()
        .map(|p| channel(p))
        .collect::<CliResult<_>>()?;
    let sessions: Vec<Session> = schemes
        .iter()
        .map(|s| {
            Ok(Session::new(
                s.config.clone(),
                load_prior(&s.config.codec)?,
            )?)
        })
        .collect::<CliResult<_>>()?;

    let mut plan = Vec::new();
    for image in 0..images.len() {
        for repetition in 0..spec.repetitions {
            for preset in 0..channels.len() {
                for scheme in 0..schemes.len() {
                    plan.push(Job {
                        image,
                        repetition,
                        preset,
                        scheme,
                    });
                }
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Usage(format!("--jobs: {e}")))?;
    let episodes: Vec<(String, Episode)> = pool.install(|| {
        plan.par_iter()
            .map(|job| {
                let (id, img) = &images[job.image];
                let seed = episode_seed(spec.seed, job.image, job.repetition, job.preset);
                let ep = run_episode(
                    &sessions[job.scheme],
                    img,
                    *id,
                    &channels[job.preset],
                    seed,
                    &schemes[job.scheme].protection,
                )?;
                Ok((schemes[job.scheme].label.clone(), ep))
            })
            .collect::<CliResult<_>>()
    })?;

    let mut groups: BTreeMap<(usize, usize), (usize, f64, usize)> = BTreeMap::new();
    for (job, (_, ep)) in plan.iter().zip(&episodes) {
        let g = groups.entry((job.preset, job.scheme)).or_default();
        g.0 += 1;
        g.1 += ep.metrics.psnr_db;
        g.2 += usize::from(ep.outcome == Outcome::Failed);
    }
    let summary = groups
        .into_iter()
        .map(|((p, s), (n, psnr, failed))| SummaryRow {
            preset: channels[p].name.clone(),
            scheme: schemes[s].label.clone(),
            episodes: n,
            mean_psnr_db: psnr / n as f64,
            failure_ratio: failed as f64 / n as f64,
        })
        .collect();
    Ok(SweepResult { episodes, summary })
}

/// Path of the summary written next to `output`: `x.csv` → `x.summary.csv`.
pub fn summary_path(output: &Path) -> PathBuf {
    output.with_extension("summary.csv")
}

/// Writes the episode CSV and the summary CSV through one buffered writer
/// each, in result order.
pub fn write_results(result: &SweepResult, output: &Path) -> CliResult<PathBuf> {
    let io = |e: std::io::Error, p: &Path| CliError::Io(format!("{}: {e}", p.display()));
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io(e, dir))?;
    }
    let mut w = BufWriter::new(fs::File::create(output).map_err(|e| io(e, output))?);
    writeln!(w, "{CSV_HEADER}").map_err(|e| io(e, output))?;
    for (_, ep) in &result.episodes {
        writeln!(w, "{}", ep.csv_row()).map_err(|e| io(e, output))?;
    }
    w.flush().map_err(|e| io(e, output))?;

    let path = summary_path(output);
    let mut w = BufWriter::new(fs::File::create(&path).map_err(|e| io(e, &path))?);
    writeln!(w, "{SUMMARY_HEADER}").map_err(|e| io(e, &path))?;
    for row in &result.summary {
        writeln!(w, "{}", row.csv_row()).map_err(|e| io(e, &path))?;
    }
    w.flush().map_err(|e| io(e, &path))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    #[test]
    fn seeds_differ_per_coordinate() {
        let base = episode_seed(1, 0, 0, 0);
        assert_ne!(base, episode_seed(2, 0, 0, 0));
        assert_ne!(base, episode_seed(1, 1, 0, 0));
        assert_ne!(base, episode_seed(1, 0, 1, 0));
        assert_ne!(base, episode_seed(1, 0, 0, 1));
        // the coordinates are not interchangeable
        assert_ne!(episode_seed(1, 1, 0, 0), episode_seed(1, 0, 1, 0));
        let manual = splitmix64(splitmix64(splitmix64(splitmix64(9) ^ 3) ^ 2) ^ 1);
        assert_eq!(episode_seed(9, 3, 2, 1), manual);
    }

    #[test]
    fn sweep_is_independent_of_jobs() {
        let spec = parse_config(
            "images = corpus:2\nmode = LC, ISC\nL = 4\nfec = 4:1\npresets = EP3, EP5\nrepetitions = 2\nseed = 5",
            &[],
        )
        .unwrap();
        let a = run_sweep(&spec, 1).unwrap();
        let b = run_sweep(&spec, 3).unwrap();
        assert_eq!(a.episodes.len(), 2 * 2 * 2 * 3);
        assert_eq!(a.episodes, b.episodes);
        assert_eq!(a.summary, b.summary);
        assert_eq!(a.summary.len(), 6);
        for row in &a.summary {
            assert_eq!(row.episodes, 4);
            assert!((0.0..=1.0).contains(&row.failure_ratio));
        }
    }
}
