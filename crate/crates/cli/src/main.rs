use beamlearn_cli::{exit_code, run, thread_count, Cli, THREADS_ENV};
use clap::Parser;

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_env("BEAMLEARN_LOG").init();

    let code = match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    };
    std::process::exit(code);
}

fn execute(cli: &Cli) -> beamlearn::Result<()> {
    let env = std::env::var(THREADS_ENV).ok();
    if let Some(n) = thread_count(cli.threads, env.as_deref())? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| beamlearn::Error::Config(format!("thread pool: {e}")))?;
    }
    let report = run(&cli.command)?;
    if cli.json {
        println!("{}", serde_json::to_string_pretty(&report.json)?);
    } else {
        print!("{}", report.text);
    }
    Ok(())
}
