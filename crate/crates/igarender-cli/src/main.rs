//! Command-line front end for the isogeometric volume renderer.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use igarender::color::compare_images;
use igarender::convergence::{convergence_study, default_ds};
use igarender::image::Image;
use igarender::inversion::Method;
use igarender::pipeline;
use igarender::scene::Scene;
use igarender::scenefile::{self, SceneFile};
use igarender::surfnet::{dump_indexed, tessellate_block};
use igarender::testmaps::AnalyticMap;
use igarender::voxel::{render_voxel, voxelize, VoxelGrid};

#[derive(Parser)]
#[command(name = "igarender", version, about = "Pixel-accurate volume rendering of trivariate B-spline models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ray-cast a scene file directly on the spline model.
    Render(RenderArgs),
    /// Resample a scene's field onto a regular voxel grid.
    Voxelize(VoxelizeArgs),
    /// Ray-march a voxel grid with the scene's camera and transfer function.
    RenderVoxel(RenderVoxelArgs),
    /// Per-pixel CIEDE2000 difference of two images.
    Compare(CompareArgs),
    /// Convergence study of the inversion methods on an analytic map.
    Converge(ConvergeArgs),
    /// Write the view-dependent boundary tessellation as an indexed mesh.
    Tessdump(TessdumpArgs),
    /// Write a built-in scene and its volume files into a directory.
    Fixture(FixtureArgs),
}

#[derive(Args)]
struct SceneArgs {
    /// Scene file (TOML).
    scene: PathBuf,
    /// Integration method (rk1, irk1, rk2, rk3, rk4, rk4-38, rkf, rf).
    #[arg(long)]
    method: Option<String>,
    /// Stiffness factor of the pullback field.
    #[arg(long)]
    c: Option<f64>,
    /// Sample distance in world units.
    #[arg(long, conflicts_with = "samples")]
    ds: Option<f64>,
    /// Samples per scene diagonal.
    #[arg(long)]
    samples: Option<f64>,
    /// Fixed Newton tolerance instead of the per-pixel frustum.
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
}

impl SceneArgs {
    fn load(&self) -> Result<Scene> {
        let mut file = SceneFile::load(&self.scene)?;
        let integ = &mut file.integrator;
        if let Some(m) = &self.method {
            integ.method = Some(m.clone());
        }
        if self.c.is_some() {
            integ.c = self.c;
        }
        if self.ds.is_some() {
            integ.ds = self.ds;
            integ.samples = None;
        }
        if self.samples.is_some() {
            integ.samples = self.samples;
            integ.ds = None;
        }
        if self.tolerance.is_some() {
            integ.tolerance = self.tolerance;
        }
        if let Some(w) = self.width {
            file.camera.width = w;
        }
        if let Some(h) = self.height {
            file.camera.height = h;
        }
        let base = self.scene.parent().unwrap_or(Path::new("."));
        let loaded = file.resolve(base, &self.scene.display().to_string())?;
        for d in &loaded.defaults {
            eprintln!("default: {d}");
        }
        Ok(loaded.scene)
    }
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    scene: SceneArgs,
    /// Output image (.ppm or .png).
    #[arg(short, long)]
    output: PathBuf,
    /// Disable supersampling between samples.
    #[arg(long)]
    no_supersample: bool,
    /// Force the pixel-accuracy audit on or off.
    #[arg(long)]
    audit: Option<bool>,
    /// Write the audit summary here instead of stdout.
    #[arg(long)]
    audit_out: Option<PathBuf>,
    /// Write an image marking flagged pixels.
    #[arg(long)]
    flags_image: Option<PathBuf>,
    /// Exit with status 2 when more pixels than this are flagged.
    #[arg(long)]
    max_flagged: Option<usize>,
}

#[derive(Args)]
struct VoxelizeArgs {
    scene: PathBuf,
    /// Output grid file.
    #[arg(short, long)]
    output: PathBuf,
    /// Voxels per axis.
    #[arg(long, default_value_t = 64)]
    res: usize,
}

#[derive(Args)]
struct RenderVoxelArgs {
    #[command(flatten)]
    scene: SceneArgs,
    /// Grid written by `voxelize`; resampled on the fly when absent.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Voxels per axis when resampling on the fly.
    #[arg(long, default_value_t = 64)]
    res: usize,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    a: PathBuf,
    b: PathBuf,
    /// Write the banded error heatmap.
    #[arg(long)]
    heatmap: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TableFormat {
    Text,
    Csv,
}

#[derive(Args)]
struct ConvergeArgs {
    /// Registered analytic map.
    #[arg(long, default_value = "damped-sine")]
    map: String,
    /// Methods to run; all when omitted.
    #[arg(long, value_delimiter = ',')]
    method: Vec<String>,
    /// Sample distances.
    #[arg(long, value_delimiter = ',')]
    ds: Vec<f64>,
    /// Stiffness factor for every ODE method; per-method default when omitted.
    #[arg(long)]
    c: Option<f64>,
    /// Root-finding tolerances.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1e-3, 1e-14])]
    tol: Vec<f64>,
    #[arg(long, value_enum, default_value_t = TableFormat::Text)]
    format: TableFormat,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct TessdumpArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct FixtureArgs {
    /// One of twisted-bar, collapsed-edge, annulus.
    name: String,
    /// Target directory.
    dir: PathBuf,
    #[arg(long, default_value_t = 320)]
    width: u32,
    #[arg(long, default_value_t = 240)]
    height: u32,
    #[arg(long, default_value = "rk4")]
    method: String,
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn render(args: &RenderArgs) -> Result<ExitCode> {
    let mut scene = args.scene.load()?;
    if args.no_supersample {
        scene.supersample = false;
    }
    if let Some(a) = args.audit {
        scene.audit = a;
    }
    let start = Instant::now();
    let out = pipeline::render(&scene)?;
    log::info!("rendered in {:.2} s", start.elapsed().as_secs_f64());
    out.image.save(&args.output)?;
    if let Some(p) = &args.flags_image {
        out.flag_image().save(p)?;
    }
    let text = format!("{}checksum={:016x}\n", out.audit.to_text(), out.image.checksum());
    write_text(args.audit_out.as_deref(), &text)?;
    if let Some(max) = args.max_flagged {
        if out.audit.flagged_pixels > max {
            eprintln!("error: {} flagged pixels exceed the limit of {max}", out.audit.flagged_pixels);
            return Ok(ExitCode::from(2));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Render(a) => return render(&a),
        Command::Voxelize(a) => {
            let loaded = scenefile::load_scene(&a.scene)?;
            let grid = voxelize(&loaded.scene.blocks, [a.res; 3])?;
            grid.save(&a.output)?;
            println!("voxels={}\ninside={}", grid.values.len(), grid.inside_count());
        }
        Command::RenderVoxel(a) => {
            let scene = a.scene.load()?;
            let grid = match &a.grid {
                Some(p) => VoxelGrid::load(p)?,
                None => voxelize(&scene.blocks, [a.res; 3])?,
            };
            let samples = scene.diagonal() / scene.integrator.ds;
            let img = render_voxel(&scene, &grid, samples);
            img.save(&a.output)?;
            println!("checksum={:016x}", img.checksum());
        }
        Command::Compare(a) => {
            let (ia, ib) = (Image::load(&a.a)?, Image::load(&a.b)?);
            let cmp = compare_images(&ia, &ib)?;
            if let Some(p) = &a.heatmap {
                cmp.heatmap.save(p)?;
            }
            let s = cmp.stats;
            println!("max_delta_e={:.6}\nmean_delta_e={:.6}\nvar_delta_e={:.6}", s.max, s.mean, s.var);
        }
        Command::Converge(a) => {
            let Some(map) = AnalyticMap::by_name(&a.map) else {
                bail!("unknown map `{}`; registered maps: {}", a.map, AnalyticMap::NAMES.join(", "));
            };
            let methods: Vec<Method> = if a.method.is_empty() {
                Method::ALL.to_vec()
            } else {
                a.method.iter().map(|m| m.parse()).collect::<Result<_, _>>()?
            };
            let ds = if a.ds.is_empty() { default_ds() } else { a.ds.clone() };
            let table = convergence_study(&map, &methods, &ds, a.c, &a.tol);
            let text = match a.format {
                TableFormat::Text => table.to_text(),
                TableFormat::Csv => table.to_csv(),
            };
            write_text(a.output.as_deref(), &text)?;
        }
        Command::Tessdump(a) => {
            let scene = a.scene.load()?;
            let tris: Vec<_> =
                scene.blocks.iter().flat_map(|b| tessellate_block(&b.geometry, &scene.camera, b.id)).collect();
            fs::write(&a.output, dump_indexed(&tris)).with_context(|| format!("writing {}", a.output.display()))?;
            println!("triangles={}", tris.len());
        }
        Command::Fixture(a) => {
            let method: Method = a.method.parse()?;
            let Some(fx) = scenefile::fixture(&a.name, a.width, a.height, method) else {
                bail!("unknown fixture `{}`; available: {}", a.name, scenefile::FIXTURES.join(", "));
            };
            let path = fx.write(&a.dir)?;
            println!("{}", path.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
