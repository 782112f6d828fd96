use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use cardiokey::augment::{apply_traced, AugmentKind, AugmentSpec};
use cardiokey::config::RunConfig;
use cardiokey::eval_metrics::{
    auc, curves, eer, eer_point, fnmr_at_fmr, gmean_imean, write_curves_csv, Convention, ScoreMatrix, ScoreTable,
};
use cardiokey::explain::{occlusion_relevance, saliency, saliency_all_outputs, NetModel, Target};
use cardiokey::fiducial::{detect_r_peaks, dmean_outliers, segment_heartbeats};
use cardiokey::io::{read_signal_csv, save_signal_csv, write_atomic};
use cardiokey::losses::Linkability;
use cardiokey::matching::Metric;
use cardiokey::pipeline::{
    beats_from_recordings, extract_beats, identification_matrix, keyed_scores, load_dataset_dir, save_dataset_dir,
    select_identities, synth_complementary_stream, synth_drift_timeline, synth_recordings, train, verification_scores,
    DatasetConfig, DriftConfig, LossConfig, ModelBundle, Protocol, Recording, MANIFEST_FILE,
};
use cardiokey::rng::{seed_from_env, seeded};
use cardiokey::security_eval::{cancelability_analysis, unlinkability_analysis, KeyedScoreTable};
use cardiokey::signal::{bandpass_filter, normalize_values, resample, NormMethod};
use cardiokey::triplet_gen::{LabeledDataset, SecureKey, KEY_BITS};
use cardiokey::update_cascade::{
    fusion_train, read_prob_stream, run_timeline, sweep_threshold, unimodal_and_fusion_accuracy, Band,
    FixationSchedule, FusionConfig, UpdatePolicy,
};

use crate::{Command, ExplainMethod, LinkabilityName, LossName, ReportArgs};

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth { identities, recordings, duration, rate, noise, seed, out, report } => {
            let cfg = DatasetConfig {
                identities,
                recordings,
                duration_s: duration,
                rate,
                noise_sigma: noise,
                seed: resolve_seed(seed)?,
                ..Default::default()
            };
            synth(&cfg, &out, &report)
        }
        Command::Preprocess {
            input,
            channel,
            out,
            filtered,
            low_hz,
            high_hz,
            no_filter,
            pre_ms,
            post_ms,
            dmean,
            dmean_alpha,
            dmean_beta,
            report,
        } => {
            let s = read_signal_csv(open(&input)?, channel)?;
            let s = if no_filter { s } else { bandpass_filter(&s, low_hz, high_hz, 2)? };
            if let Some(p) = &filtered {
                save_signal_csv(&s, p)?;
            }
            let peaks = detect_r_peaks(&s)?;
            let h = segment_heartbeats(&s, &peaks, pre_ms, post_ms);
            let keep = if dmean { dmean_outliers(&h, dmean_alpha, dmean_beta) } else { vec![true; h.len()] };
            let mut w = csv::Writer::from_writer(Vec::new());
            let beat_len = h.beats.first().map_or(0, Vec::len);
            let mut header = vec!["r_index".to_string()];
            header.extend((0..beat_len).map(|i| format!("s{i}")));
            w.write_record(&header)?;
            let mut kept = 0;
            for ((b, r), k) in h.beats.iter().zip(&h.r_indices).zip(&keep) {
                if *k {
                    let mut row = vec![r.to_string()];
                    row.extend(normalize_values(b, NormMethod::Zscore)?.iter().map(f64::to_string));
                    w.write_record(&row)?;
                    kept += 1;
                }
            }
            write_atomic(&out, &w.into_inner()?)?;
            let body = json!({
                "rate_hz": s.rate(),
                "n_samples": s.len(),
                "n_peaks": peaks.len(),
                "n_edge_dropped": h.dropped,
                "n_dmean_rejected": h.len() - kept,
                "n_beats": kept,
                "beat_len": beat_len,
            });
            let summary = format!("{} peaks, {kept} beats of {beat_len} samples written", peaks.len());
            emit(&report, "preprocess", body, summary)
        }
        Command::Augment { input, out, kind, seed, report } => {
            let s = read_signal_csv(open(&input)?, 0)?;
            let spec = AugmentSpec { kind: AugmentKind::from_name(&kind)?, seed: resolve_seed(seed)? };
            let (a, trace) = apply_traced(&s, &spec)?;
            save_signal_csv(&a, &out)?;
            let body = json!({ "kind": kind, "seed": spec.seed, "n_samples": a.len(), "parameters": format!("{trace:?}") });
            emit(&report, "augment", body, format!("{kind} applied to {} samples", a.len()))
        }
        Command::Train {
            config,
            data,
            loss,
            alpha,
            beta,
            gamma,
            scale,
            margin,
            linkability,
            kld_bins,
            kld_bandwidth,
            epochs,
            triplets_per_epoch,
            lr,
            error_probability,
            train_identities,
            seed,
            out,
            report,
        } => {
            let mut rc = match &config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::new(resolve_seed(None)?),
            };
            if let Some(s) = seed {
                rc.set_seed(s);
            }
            if let Some(d) = data {
                rc.data.dir = Some(d);
            }
            if let Some(name) = loss {
                let link = match linkability.unwrap_or(LinkabilityName::Stats) {
                    LinkabilityName::Stats => Linkability::Stats,
                    LinkabilityName::Kld => Linkability::Kld { bins: kld_bins, bandwidth: kld_bandwidth },
                };
                let a = alpha.unwrap_or(1.0);
                rc.loss = match name {
                    LossName::Triplet => LossConfig::Triplet { alpha: a },
                    LossName::Secure => LossConfig::Secure { alpha: a },
                    LossName::SecureTl2 => LossConfig::SecureTl2 { alpha: a, gamma: gamma.unwrap_or(0.9), linkability: link },
                    LossName::Stochastic => {
                        LossConfig::Stochastic { alpha: a, beta: beta.unwrap_or(0.99), gamma: gamma.unwrap_or(0.99) }
                    }
                    LossName::Arcface => LossConfig::Arcface { s: scale.unwrap_or(16.0), m: margin.unwrap_or(0.3) },
                };
            } else if alpha.is_some() || beta.is_some() || gamma.is_some() || scale.is_some() || margin.is_some() {
                bail!("loss hyperparameter flags need --loss");
            }
            if let Some(v) = epochs {
                rc.optim.epochs = v;
            }
            if let Some(v) = triplets_per_epoch {
                rc.optim.triplets_per_epoch = v;
            }
            if let Some(v) = lr {
                rc.optim.lr = v;
            }
            if let Some(v) = error_probability {
                rc.optim.error_probability = v;
            }
            if let Some(v) = train_identities {
                rc.data.train_identities = v;
            }
            rc.validate()?;
            train_command(&rc, &out, &report)
        }
        Command::Score { model, data, out, matrix, enroll_beats, seed, report } => {
            let bundle = ModelBundle::load(&model).with_context(|| format!("loading model {}", model.display()))?;
            let net = bundle.network()?;
            let test = held_out(&bundle, &data)?;
            let p = Protocol { enroll_beats };
            let body = if bundle.loss.is_keyed() {
                if matrix.is_some() {
                    bail!("--matrix is only available for unkeyed models");
                }
                let seed = resolve_seed(seed)?;
                let t = keyed_scores(&net, &test, &p, &mut seeded(seed))?;
                write_with(&out, |w| t.write_csv(w))?;
                json!({
                    "keyed": true,
                    "seed": seed,
                    "n_mated_same_key": t.mated_same_key.len(),
                    "n_nonmated_same_key": t.nonmated_same_key.len(),
                    "n_mated_diff_key": t.mated_diff_key.len(),
                    "n_nonmated_diff_key": t.nonmated_diff_key.len(),
                })
            } else {
                let st = verification_scores(&net, &test, &p)?;
                write_with(&out, |w| st.write_csv(w))?;
                if let Some(mp) = &matrix {
                    let m = identification_matrix(&net, &test, &p)?;
                    write_with(mp, |w| m.write_csv(w))?;
                }
                json!({
                    "keyed": false,
                    "n_genuine": st.genuine.len(),
                    "n_impostor": st.impostor.len(),
                    "eer": eer(&curves(&st)?),
                })
            };
            let summary = format!("scores for {} held-out identities written", test.n_identities());
            emit(&report, "score", body, summary)
        }
        Command::EvalVerify { scores, similarity, curves: curves_out, report } => {
            let conv = if similarity { Convention::Similarity } else { Convention::Dissimilarity };
            let st = ScoreTable::read_csv(open(&scores)?, conv)?;
            let c = curves(&st)?;
            if let Some(p) = &curves_out {
                write_with(p, |w| write_curves_csv(&c, w))?;
            }
            let (gmean, imean) = gmean_imean(&st)?;
            let e = eer(&c);
            let body = json!({
                "n_genuine": st.genuine.len(),
                "n_impostor": st.impostor.len(),
                "eer": e,
                "eer_threshold": eer_point(&c).interpolate(&c.thresholds),
                "auc": auc(&c),
                "fnmr_at_fmr_1e-2": fnmr_at_fmr(&c, 1e-2),
                "fnmr_at_fmr_1e-3": fnmr_at_fmr(&c, 1e-3),
                "genuine_mean": gmean,
                "impostor_mean": imean,
            });
            emit(&report, "eval-verify", body, format!("EER {:.4} ({:.2}%)", e, 100.0 * e))
        }
        Command::EvalIdentify { scores, rank, threshold, report } => {
            let m = ScoreMatrix::read_csv(open(&scores)?)?;
            let r = m.metrics(rank, threshold)?;
            let summary = format!("IDR {:.4}, TPIR@{rank} {:.4}", r.idr, r.tpir_r);
            let mut body = serde_json::to_value(&r)?;
            body["rank"] = json!(rank);
            body["n_queries"] = json!(m.scores.len());
            body["n_enrolled"] = json!(m.enrolled_ids.len());
            emit(&report, "eval-identify", body, summary)
        }
        Command::EvalSecurity { scores, model, data, enroll_beats, bandwidth, seed, report } => {
            let t = match (&scores, &model, &data) {
                (Some(s), _, _) => KeyedScoreTable::read_csv(open(s)?)?,
                (None, Some(m), Some(d)) => {
                    let bundle = ModelBundle::load(m)?;
                    if !bundle.loss.is_keyed() {
                        bail!("eval-security needs a model trained with a keyed loss");
                    }
                    let test = held_out(&bundle, d)?;
                    keyed_scores(&bundle.network()?, &test, &Protocol { enroll_beats }, &mut seeded(resolve_seed(seed)?))?
                }
                _ => bail!("give --scores, or --model with --data"),
            };
            let c = cancelability_analysis(&t)?;
            let u = unlinkability_analysis(&t.mated_diff_key, &t.nonmated_diff_key, bandwidth)?;
            let body = json!({
                "eer": c.eer,
                "fmr_c_at_eer": c.fmr_c_at_eer,
                "d_sys": u.d_sys,
                "bandwidth_mated": u.bandwidth_mated,
                "bandwidth_nonmated": u.bandwidth_nonmated,
                "n_mated_same_key": t.mated_same_key.len(),
                "n_nonmated_same_key": t.nonmated_same_key.len(),
                "n_mated_diff_key": t.mated_diff_key.len(),
                "n_nonmated_diff_key": t.nonmated_diff_key.len(),
            });
            let summary = format!("EER {:.4}, FMR_C@EER {:.4}, D_sys {:.4}", c.eer, c.fmr_c_at_eer, u.d_sys);
            emit(&report, "eval-security", body, summary)
        }
        Command::UpdateSim { identities, time_points, drift, band_high, fix_step, capacity, seed, report } => {
            let cfg = DriftConfig { identities, time_points, drift, capacity, seed: resolve_seed(seed)?, ..Default::default() };
            let (galleries, stream) = synth_drift_timeline(&cfg)?;
            let band = Band::new(0.0, band_high)?;
            let policies = [
                ("static", UpdatePolicy::Static),
                ("fifo", UpdatePolicy::Fifo { band }),
                ("fixation", UpdatePolicy::Fixation { band, schedule: FixationSchedule::Adaptive { n: fix_step } }),
            ];
            let mut body = Map::new();
            let mut finals = Vec::new();
            for (name, policy) in policies {
                let mut g = galleries.clone();
                let r = run_timeline(&mut g, &stream, Metric::NormalizedEuclidean, policy)?;
                finals.push(format!("{name} {:.3}", r.last().map_or(f64::NAN, |x| x.accuracy)));
                body.insert(name.into(), serde_json::to_value(&r)?);
            }
            body.insert("seed".into(), json!(cfg.seed));
            emit(&report, "update-sim", Value::Object(body), format!("final accuracy: {}", finals.join(", ")))
        }
        Command::CascadeSim { stream, classes, rows, train_fraction, grid, seed, report } => {
            if !(0.0 < train_fraction && train_fraction < 1.0) || grid < 2 {
                bail!("train fraction must lie in (0, 1) and the grid needs at least 2 points");
            }
            let all = match &stream {
                Some(p) => read_prob_stream(open(p)?)?,
                None => synth_complementary_stream(classes, rows, resolve_seed(seed)?)?,
            };
            let cut = ((all.len() as f64 * train_fraction).round() as usize).clamp(1, all.len().saturating_sub(1));
            let (fit, eval) = all.split_at(cut);
            if eval.is_empty() {
                bail!("need at least 2 rows");
            }
            let fusion = fusion_train(fit, &FusionConfig::default())?;
            let mut thresholds: Vec<f64> = (0..grid).map(|i| i as f64 / (grid - 1) as f64).collect();
            thresholds.push(1.01);
            let sweep = sweep_threshold(eval, &fusion, &thresholds)?;
            let (p, s, f) = unimodal_and_fusion_accuracy(eval, &fusion)?;
            let best = sweep.iter().fold(&sweep[0], |b, x| if x.accuracy > b.accuracy { x } else { b });
            let body = json!({
                "n_fit": fit.len(),
                "n_eval": eval.len(),
                "primary_accuracy": p,
                "secondary_accuracy": s,
                "fusion_accuracy": f,
                "best_threshold": best.threshold,
                "best_accuracy": best.accuracy,
                "sweep": sweep,
            });
            let summary = format!(
                "primary {p:.3}, secondary {s:.3}, fusion {f:.3}; best cascade {:.3} at T = {}",
                best.accuracy, best.threshold
            );
            emit(&report, "cascade-sim", body, summary)
        }
        Command::Explain { model, input, beat, method, window, class, key_hex, seed, out, report } => {
            let bundle = ModelBundle::load(&model)?;
            let net = bundle.network()?;
            let mut s = read_signal_csv(open(&input)?, 0)?;
            if s.rate() != bundle.rate {
                s = resample(&s, bundle.rate)?;
            }
            let r_peaks = detect_r_peaks(&s)?;
            let beats = extract_beats(&Recording { identity: 0, recording: 0, signal: s, r_peaks }, &bundle.preprocessing)?;
            let Some(x) = beats.get(beat) else {
                bail!("beat {beat} requested but the recording has {}", beats.len());
            };
            let key = match (net.config().key_dim, key_hex) {
                (0, None) => None,
                (0, Some(_)) => bail!("--key-hex given for an unkeyed model"),
                (_, Some(h)) => Some(SecureKey::from_hex(&h, KEY_BITS)?.normalized()),
                (_, None) => Some(SecureKey::random(KEY_BITS, &mut seeded(resolve_seed(seed)?)).normalized()),
            };
            let m = NetModel::new(&net, key.as_deref())?;
            let target = match class {
                Some(c) => {
                    let Some(head) = bundle.head.as_ref() else {
                        bail!("--class needs a model with a classification head");
                    };
                    Target::ClassProbability { head, class: c }
                }
                None => {
                    let mut t = vec![0.0; net.config().embedding_dim()];
                    for b in &beats {
                        let y = net.embed(b, key.as_deref())?;
                        t.iter_mut().zip(y).for_each(|(a, v)| *a += v / beats.len() as f64);
                    }
                    Target::NegDistance(t)
                }
            };
            let map = match method {
                ExplainMethod::Occlusion => occlusion_relevance(&m, x, &target, window, window, 0.0)?,
                ExplainMethod::Saliency => saliency(&m, x, &target)?,
                ExplainMethod::SaliencyAll => saliency_all_outputs(&m, x)?,
            };
            let norm = map.normalized();
            write_with(&out, |w| norm.write_csv(x, w))?;
            let peak = norm.values.iter().enumerate().fold(0, |b, (i, v)| if *v > norm.values[b] { i } else { b });
            let body = json!({
                "method": format!("{:?}", map.method).to_lowercase(),
                "target": map.target,
                "beat": beat,
                "n_beats": beats.len(),
                "beat_len": x.len(),
                "most_relevant_sample": peak,
            });
            emit(&report, "explain", body, format!("relevance for beat {beat} written; most relevant sample {peak}"))
        }
    }
}

fn resolve_seed(arg: Option<u64>) -> Result<u64> {
    Ok(match arg {
        Some(s) => s,
        None => seed_from_env()?.unwrap_or(0),
    })
}

fn open(path: &Path) -> Result<File> {
    File::open(path).with_context(|| format!("cannot open {}", path.display()))
}

fn write_with(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> cardiokey::Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    write_atomic(path, &buf).with_context(|| format!("cannot write {}", path.display()))
}

fn emit(args: &ReportArgs, command: &str, body: Value, summary: String) -> Result<()> {
    let mut report = Map::new();
    report.insert("schema".into(), json!(1));
    report.insert("command".into(), json!(command));
    match body {
        Value::Object(m) => report.extend(m),
        other => {
            report.insert("result".into(), other);
        }
    }
    let text = format!("{}\n", serde_json::to_string_pretty(&Value::Object(report))?);
    if let Some(p) = &args.report {
        write_atomic(p, text.as_bytes()).with_context(|| format!("cannot write {}", p.display()))?;
    }
    if args.json {
        print!("{text}");
    } else {
        println!("{summary}");
    }
    Ok(())
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn synth(cfg: &DatasetConfig, out: &Path, report: &ReportArgs) -> Result<()> {
    let recs = synth_recordings(cfg)?;
    let m = save_dataset_dir(&recs, Some(cfg), out)?;
    let mut checksums = BTreeMap::new();
    for name in m.recordings.iter().map(|e| e.file.as_str()).chain([MANIFEST_FILE]) {
        checksums.insert(name.to_string(), sha256_hex(&fs::read(out.join(name))?));
    }
    let listing: String = checksums.iter().map(|(k, v)| format!("{v}  {k}\n")).collect();
    let dataset = sha256_hex(listing.as_bytes());
    let body = json!({
        "identities": cfg.identities,
        "recordings": recs.len(),
        "rate_hz": cfg.rate,
        "seed": cfg.seed,
        "checksums": checksums,
        "dataset_checksum": dataset,
    });
    emit(report, "synth", body, format!("{} recordings written, checksum {}", recs.len(), &dataset[..16]))
}

fn load_data(rc: &RunConfig) -> Result<(Vec<Recording>, f64)> {
    match &rc.data.dir {
        Some(d) => {
            let (_, recs) = load_dataset_dir(d)?;
            let rate = recs.first().map(|r| r.signal.rate()).context("dataset has no recordings")?;
            Ok((recs, rate))
        }
        None => Ok((synth_recordings(&rc.data.synth)?, rc.data.synth.rate)),
    }
}

fn train_command(rc: &RunConfig, out: &Path, report: &ReportArgs) -> Result<()> {
    let (recs, rate) = load_data(rc)?;
    let prep = rc.data.synth.preprocessing();
    let ds = beats_from_recordings(&recs, &prep)?;
    let ids = ds.identities();
    if ids.len() < 2 {
        bail!("training needs at least 2 identities");
    }
    let n = rc.data.train_identities.min(ids.len());
    let chosen = &ids[..n];
    let train_ds = select_identities(&ds, |id| chosen.binary_search(&id).is_ok())?;
    let tc = rc.train_config(prep.beat_len(rate))?;
    let outcome = train(&train_ds, &tc)?;
    let bundle = ModelBundle::new(&outcome, rc.loss, prep, &train_ds);
    bundle.save(out)?;
    let last = outcome.loss_history.last().copied().unwrap_or(f64::NAN);
    let body = json!({
        "loss": rc.loss,
        "seed": rc.seed,
        "epochs": tc.epochs,
        "n_params": outcome.net.n_params(),
        "train_identities": bundle.train_identities,
        "n_train_beats": train_ds.len(),
        "final_loss": last,
        "loss_history": outcome.loss_history,
    });
    let summary = format!("{} trained on {} beats, final loss {last:.5}", rc.loss.name(), train_ds.len());
    emit(report, "train", body, summary)
}

fn held_out(bundle: &ModelBundle, data: &Path) -> Result<LabeledDataset> {
    let (_, recs) = load_dataset_dir(data)?;
    let rate = recs.first().map(|r| r.signal.rate()).context("dataset has no recordings")?;
    if rate != bundle.rate {
        bail!("dataset rate {rate} Hz differs from the model's {} Hz", bundle.rate);
    }
    let ds = beats_from_recordings(&recs, &bundle.preprocessing)?;
    select_identities(&ds, |id| bundle.train_identities.binary_search(&id).is_err())
        .context("the dataset has no identities outside the model's training set")
}
