use std::process::ExitCode;

const USAGE: &str = "\
rym: Ricci-Yang-Mills flow on torus bundles over surfaces

Usage:
  rym run <config.json>     run one experiment
  rym sweep <dir>           run every *.json config in a directory
  rym verify                run the preset suite and check expected outcomes
  rym preset <case1..case4> print a preset config

The RYM_OUT_DIR environment variable overrides the output root.
Exit codes: 0 ok, 2 singularity reached, 3 audit violation, 4 config error.";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let code = match args.get(1).map(String::as_str) {
        Some("run") => match args.get(2) {
            Some(path) => rym_cli::run_command(path),
            None => {
                eprintln!("{USAGE}");
                4
            }
        },
        Some("sweep") => match args.get(2) {
            Some(dir) => rym_cli::sweep_command(dir),
            None => {
                eprintln!("{USAGE}");
                4
            }
        },
        Some("verify") => rym_cli::verify_command(),
        Some("preset") => match args.get(2).and_then(|n| rym_cli::presets::by_name(n)) {
            Some(cfg) => {
                println!("{}", serde_json::to_string_pretty(&cfg).expect("serializable preset"));
                0
            }
            None => {
                eprintln!("unknown preset; expected case1, case2, case3 or case4");
                4
            }
        },
        _ => {
            eprintln!("{USAGE}");
            4
        }
    };
    ExitCode::from(code as u8)
}
