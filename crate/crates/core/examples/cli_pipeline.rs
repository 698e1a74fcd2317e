//! The command-line workflow end to end in a scratch directory:
//! simulate, fit, predict, evaluate.

use geojoint::cli::main_with_args;

fn main() {
    let dir = std::env::temp_dir().join("geojoint-cli-pipeline");
    std::fs::create_dir_all(&dir).expect("scratch directory");
    let out = dir.to_str().expect("utf-8 path");
    for cmd in ["simulate", "fit", "predict", "evaluate"] {
        println!("$ geojoint {cmd} --seed 4 --out-dir {out}");
        let code = main_with_args(["geojoint", cmd, "--seed", "4", "--out-dir", out]);
        // a fit that stops early still writes its best iterate
        if code != 0 && !(cmd == "fit" && code == 5) {
            std::process::exit(code);
        }
    }
    let auc = std::fs::read_to_string(dir.join("auc.csv")).expect("auc.csv");
    print!("{auc}");
}
