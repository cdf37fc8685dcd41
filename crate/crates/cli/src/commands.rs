use std::path::{Path, PathBuf};

use hdrtv_core::datagen::{
    build_pairs, ingest_pairs, read_dataset, read_png, synth_frame, write_dataset, write_png, PairedDataset, SynthConfig,
};
use hdrtv_core::lut::{apply_lut, export_lut, write_point_cloud, Lut3D};
use hdrtv_core::metrics::MetricReport;
use hdrtv_core::models::{
    train_agcm, train_hg, train_le, Agcm, AgcmConfig, AgcmInit, Hg, HgConfig, Le, LeConfig, TrainConfig, TrainLog,
};
use hdrtv_core::testcard::make_testcard;
use hdrtv_core::{EncodedImage, Error, Gamut, Transfer};

use crate::args::*;
use crate::error::{config_err, CliError, CliResult};
use crate::manifest::{write_manifest, RunInfo};

pub fn dispatch(cli: &Cli) -> CliResult<()> {
    let info = |command, seed| RunInfo { command, seed, deterministic: cli.deterministic };
    match &cli.command {
        Cmd::Synth(a) => synth(a, &info("synth", Some(a.seed))),
        Cmd::Ingest(a) => ingest(a, &info("ingest", Some(a.seed))),
        Cmd::TrainAgcm(a) => train_agcm_cmd(a, &info("train-agcm", Some(a.common.seed))),
        Cmd::TrainLe(a) => train_le_cmd(a, &info("train-le", Some(a.common.seed))),
        Cmd::TrainHg(a) => train_hg_cmd(a, &info("train-hg", Some(a.common.seed))),
        Cmd::Infer(a) => infer(a, &info("infer", None)),
        Cmd::Eval(a) => eval(a, &info("eval", None)),
        Cmd::ExportLut(a) => export_lut_cmd(a, &info("export-lut", None)),
        Cmd::ApplyLut(a) => apply_lut_cmd(a, &info("apply-lut", None)),
        Cmd::Lutcloud(a) => lutcloud(a, &info("lutcloud", None)),
        Cmd::Testcard(a) => testcard(a, &info("testcard", None)),
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

/// Sorted names of the PNG files in `dir`.
fn png_files(dir: &Path) -> CliResult<Vec<String>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let mut names = Vec::new();
    for e in entries {
        let e = e.map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        let p = e.path();
        if p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")) {
            names.push(e.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn synth(a: &SynthArgs, info: &RunInfo) -> CliResult<()> {
    if a.out.is_none() && a.png_dir.is_none() {
        return Err(config_err("synth: give --out, --png-dir or both"));
    }
    let config = SynthConfig {
        count: a.count,
        width: a.width,
        height: a.height,
        seed: a.seed,
        patch_size: a.patch_size,
        stride: a.stride,
        cond_size: a.cond_size,
        hdr_bits: a.hdr_bits,
        sdr_key_jitter: (a.sdr_jitter_min, a.sdr_jitter_max),
        ..SynthConfig::default()
    };
    config.validate()?;
    if let Some(out) = &a.out {
        let ds = build_pairs(&config)?;
        write_dataset(&ds, out)?;
        write_manifest(info, a, out, std::slice::from_ref(out))?;
    }
    if let Some(dir) = &a.png_dir {
        let (sdr_dir, hdr_dir) = (dir.join("sdr"), dir.join("hdr"));
        create_dir(&sdr_dir)?;
        create_dir(&hdr_dir)?;
        let mut outputs = Vec::new();
        for i in 0..config.count {
            let (sdr, hdr) = synth_frame(&config, i)?;
            let name = format!("synth_{i:05}.png");
            write_png(&sdr, &sdr_dir.join(&name))?;
            write_png(&hdr, &hdr_dir.join(&name))?;
            outputs.push(sdr_dir.join(&name));
            outputs.push(hdr_dir.join(&name));
        }
        write_manifest(info, a, dir, &outputs)?;
    }
    Ok(())
}

fn ingest(a: &IngestArgs, info: &RunInfo) -> CliResult<()> {
    let ds = ingest_pairs(
        &a.sdr_dir,
        &a.hdr_dir,
        a.patch_size,
        a.stride.unwrap_or(a.patch_size),
        a.seed,
        a.cond_size,
    )?;
    write_dataset(&ds, &a.out)?;
    write_manifest(info, a, &a.out, std::slice::from_ref(&a.out))
}

struct TrainData {
    train: PairedDataset,
    val: Option<PairedDataset>,
    config: TrainConfig,
}

fn load_train_data(c: &TrainCommon) -> CliResult<TrainData> {
    let ds = read_dataset(&c.data)?;
    let (train, val) = if c.val_fraction > 0.0 {
        let (t, v) = ds.split_by_source(c.val_fraction)?;
        (t, Some(v))
    } else {
        (ds, None)
    };
    let config = TrainConfig {
        steps: c.steps,
        batch_size: c.batch_size,
        lr: c.lr,
        seed: c.seed,
        log_every: c.log_every,
        val_every: if val.is_some() { c.val_every } else { 0 },
    };
    config.validate()?;
    Ok(TrainData { train, val, config })
}

fn finish_training<A: serde::Serialize>(
    a: &A,
    c: &TrainCommon,
    info: &RunInfo,
    log: &TrainLog,
    save: impl FnOnce(&Path) -> hdrtv_core::Result<()>,
) -> CliResult<()> {
    save(&c.out)?;
    let log_path = c.log.clone().unwrap_or_else(|| with_suffix(&c.out, ".log.csv"));
    log.write_csv(&log_path)?;
    write_manifest(info, a, &c.out, &[c.out.clone(), log_path])
}

fn train_agcm_cmd(a: &TrainAgcmArgs, info: &RunInfo) -> CliResult<()> {
    let d = load_train_data(&a.common)?;
    let config = AgcmConfig { cond_blocks: a.cond_blocks, cond_size: a.cond_size, ..AgcmConfig::default() };
    let init = match a.init {
        InitArg::Identity => AgcmInit::IdentityAdjacent,
        InitArg::Kaiming => AgcmInit::Kaiming,
    };
    let model = Agcm::new(config, a.common.seed, init)?;
    let (model, log) = train_agcm(model, &d.train, d.val.as_ref(), &d.config)?;
    finish_training(a, &a.common, info, &log, |p| model.save(p))
}

fn train_le_cmd(a: &TrainLeArgs, info: &RunInfo) -> CliResult<()> {
    let agcm = Agcm::load(&a.agcm)?;
    let d = load_train_data(&a.common)?;
    let model = Le::new(LeConfig { channels: a.channels, blocks: a.blocks }, a.common.seed)?;
    let (model, log) = train_le(model, &agcm, &d.train, d.val.as_ref(), &d.config)?;
    finish_training(a, &a.common, info, &log, |p| model.save(p))
}

fn train_hg_cmd(a: &TrainHgArgs, info: &RunInfo) -> CliResult<()> {
    let agcm = Agcm::load(&a.agcm)?;
    let le = a.le.as_deref().map(Le::load).transpose()?;
    let d = load_train_data(&a.common)?;
    let model = Hg::new(HgConfig { depth: a.depth, width: a.width, gamma_mask: a.gamma_mask }, a.common.seed)?;
    let (model, log) = train_hg(model, (&agcm, le.as_ref()), &d.train, d.val.as_ref(), &d.config, a.alpha)?;
    finish_training(a, &a.common, info, &log, |p| model.save(p))
}

enum Stage {
    Agcm(Agcm),
    Le(Le),
    Hg(Hg),
}

impl Stage {
    fn apply(&self, img: &EncodedImage) -> hdrtv_core::Result<EncodedImage> {
        match self {
            Stage::Agcm(m) => m.infer(img),
            Stage::Le(m) => m.le_forward(img),
            Stage::Hg(m) => m.hg_forward(img),
        }
    }
}

fn load_stage(kind: &str, path: &Path) -> CliResult<Stage> {
    Ok(match kind {
        "agcm" => Stage::Agcm(Agcm::load(path)?),
        "le" => Stage::Le(Le::load(path)?),
        "hg" => Stage::Hg(Hg::load(path)?),
        other => return Err(config_err(format!("unknown stage `{other}`; expected agcm, le or hg"))),
    })
}

/// Stage names of a chain. AGCM always comes first, LE (if any) before
/// HG, and no stage repeats.
fn parse_chain(chain: &str) -> CliResult<Vec<&str>> {
    let stages: Vec<&str> = chain.split('+').map(str::trim).collect();
    let valid = [vec!["agcm"], vec!["agcm", "le"], vec!["agcm", "hg"], vec!["agcm", "le", "hg"]];
    if valid.iter().any(|v| *v == stages) {
        Ok(stages)
    } else if stages.first() != Some(&"agcm") {
        Err(config_err(format!(
            "chain `{chain}` must start with agcm: local enhancement and highlights only follow the global mapping"
        )))
    } else {
        Err(config_err(format!("chain `{chain}` is not one of agcm, agcm+le, agcm+hg, agcm+le+hg")))
    }
}

fn check_input(img: &EncodedImage, first: &str, path: &Path) -> CliResult<()> {
    let ok = match first {
        "agcm" => img.transfer() == Transfer::Gamma22 && img.bit_depth() == 8,
        _ => img.transfer() == Transfer::Pq && img.gamut() == Gamut::Bt2020 && img.bit_depth() == 16,
    };
    if ok {
        Ok(())
    } else if first == "agcm" {
        Err(Error::Param(format!("{}: the agcm stage takes 8-bit SDR input", path.display())).into())
    } else {
        Err(Error::Param(format!(
            "{}: the {first} stage takes a 16-bit PQ/bt2020 upstream output",
            path.display()
        ))
        .into())
    }
}

fn infer(a: &InferArgs, info: &RunInfo) -> CliResult<()> {
    let kinds: Vec<&str> = match (&a.chain, &a.stage) {
        (Some(c), None) => parse_chain(c)?,
        (None, Some(s)) if s == "le" || s == "hg" => vec![s.as_str()],
        (None, Some(s)) => {
            return Err(config_err(format!(
                "--stage must be le or hg, got `{s}`; use --chain for the agcm stage"
            )))
        }
        _ => return Err(config_err("infer: give exactly one of --chain and --stage")),
    };
    if a.ckpt.len() != kinds.len() {
        return Err(config_err(format!(
            "infer: {} stage(s) need {} checkpoint(s), got {}",
            kinds.len(),
            kinds.len(),
            a.ckpt.len()
        )));
    }
    let stages = kinds
        .iter()
        .zip(&a.ckpt)
        .map(|(k, p)| load_stage(k, p))
        .collect::<CliResult<Vec<_>>>()?;
    let run_one = |src: &Path, dst: &Path| -> CliResult<()> {
        let mut img = read_png(src)?;
        check_input(&img, kinds[0], src)?;
        for s in &stages {
            img = s.apply(&img)?;
        }
        Ok(write_png(&img, dst)?)
    };
    if a.input.is_dir() {
        create_dir(&a.out)?;
        let mut outputs = Vec::new();
        for name in png_files(&a.input)? {
            let dst = a.out.join(&name);
            run_one(&a.input.join(&name), &dst)?;
            outputs.push(dst);
        }
        write_manifest(info, a, &a.out, &outputs)
    } else {
        run_one(&a.input, &a.out)?;
        write_manifest(info, a, &a.out, std::slice::from_ref(&a.out))
    }
}

fn eval(a: &EvalArgs, info: &RunInfo) -> CliResult<()> {
    let pairs: Vec<(String, PathBuf, PathBuf)> = if a.pred.is_dir() {
        if !a.reference.is_dir() {
            return Err(config_err("eval: --pred is a directory, so --ref must be one too"));
        }
        let names = png_files(&a.pred)?;
        if names.is_empty() {
            return Err(CliError::Io(format!("{}: no PNG files", a.pred.display())));
        }
        names
            .into_iter()
            .map(|n| {
                let r = a.reference.join(&n);
                if !r.is_file() {
                    return Err(Error::Ingest { file: r, message: "no reference with this name".into() }.into());
                }
                let id = Path::new(&n).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or(n.clone());
                Ok((id, a.pred.join(&n), r))
            })
            .collect::<CliResult<_>>()?
    } else {
        let id = a.pred.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        vec![(id, a.pred.clone(), a.reference.clone())]
    };
    let items = pairs
        .iter()
        .map(|(id, p, r)| Ok((id.clone(), read_png(p)?, read_png(r)?)))
        .collect::<CliResult<Vec<_>>>()?;
    let report = MetricReport::evaluate(&items)?;
    report.write_csv(&a.out)?;
    write_manifest(info, a, &a.out, std::slice::from_ref(&a.out))
}

fn condition_for(model: &Agcm, cond: Option<&Path>) -> CliResult<Option<hdrtv_core::models::ConditionVector>> {
    match (model.has_condition(), cond) {
        (true, Some(p)) => {
            let img = read_png(p)?;
            Ok(Some(model.condition_from_image(&img)?))
        }
        (true, None) => Err(config_err("this model is conditioned: give --cond with an SDR frame")),
        (false, _) => Ok(None),
    }
}

fn export_lut_cmd(a: &ExportLutArgs, info: &RunInfo) -> CliResult<()> {
    let model = Agcm::load(&a.ckpt)?;
    let cond = condition_for(&model, a.cond.as_deref())?;
    let lut = export_lut(&model, cond.as_ref(), a.size)?;
    lut.write_cube(&a.out)?;
    write_manifest(info, a, &a.out, std::slice::from_ref(&a.out))
}

fn apply_lut_cmd(a: &ApplyLutArgs, info: &RunInfo) -> CliResult<()> {
    let lut = Lut3D::read_cube(&a.lut)?;
    let img = read_png(&a.input)?;
    let (transfer, gamut, bits) = match a.tag {
        TagArg::Hdr => (Transfer::Pq, Gamut::Bt2020, 16),
        TagArg::Sdr => (Transfer::Gamma22, Gamut::Bt709, 8),
    };
    let out = apply_lut(&lut, &img, transfer, gamut, bits)?;
    write_png(&out, &a.out)?;
    write_manifest(info, a, &a.out, std::slice::from_ref(&a.out))
}

fn lutcloud(a: &LutcloudArgs, info: &RunInfo) -> CliResult<()> {
    let lut = match (&a.ckpt, &a.lut) {
        (Some(ckpt), None) => {
            let model = Agcm::load(ckpt)?;
            let cond = condition_for(&model, a.cond.as_deref())?;
            export_lut(&model, cond.as_ref(), a.size)?
        }
        (None, Some(lut)) => Lut3D::read_cube(lut)?,
        _ => return Err(config_err("lutcloud: give exactly one of --ckpt and --lut")),
    };
    write_point_cloud(&lut, &a.out)?;
    write_manifest(info, a, &a.out, std::slice::from_ref(&a.out))
}

fn testcard(a: &TestcardArgs, info: &RunInfo) -> CliResult<()> {
    let card = make_testcard(a.width, a.height)?;
    write_png(&card, &a.out)?;
    write_manifest(info, a, &a.out, std::slice::from_ref(&a.out))
}
