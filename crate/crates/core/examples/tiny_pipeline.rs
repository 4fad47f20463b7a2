//! Runs every command of the tool on a tiny corpus inside a scratch
//! directory: data, the three training stages, detection, scoring and PLY
//! export. Takes a few seconds; the numbers are meaningless at this size.

use gspnkit::config::Config;
use gspnkit::pipeline::{cmd_eval, cmd_export_ply, cmd_gen_data, cmd_infer, cmd_train, Artifacts, Stage};

const CONFIG: &str = "
preset = desk
data.train_scenes = 4
data.test_scenes = 2
data.points_per_scene = 512
train.semantic.epochs = 1
train.gspn.epochs = 1
train.rpointnet.epochs = 1
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = Config::parse(CONFIG)?;
    cfg.out = std::env::temp_dir().join(format!("gspnkit-tiny-{}", std::process::id()));
    let arts = Artifacts::new(&cfg.out);
    let data = cmd_gen_data(&cfg, &arts)?;
    println!("{} train / {} test scenes, {} instances", data.train_scenes, data.test_scenes, data.instances);
    for stage in Stage::ALL {
        cmd_train(&cfg, &arts, stage)?;
        println!("trained {}", stage.as_str());
    }
    let inf = cmd_infer(&cfg, &arts)?;
    println!("{} instances detected", inf.instances);
    print!("{}", cmd_eval(&cfg, &arts)?.to_table());
    for p in cmd_export_ply(&arts, 0)? {
        println!("wrote {}", p.display());
    }
    std::fs::remove_dir_all(&cfg.out)?;
    Ok(())
}
