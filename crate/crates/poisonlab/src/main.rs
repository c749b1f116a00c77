use clap::Parser;

use poisonlab::cli::{execute, Cli};

fn main() {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .expect("rayon pool initializes once");
    }
    if let Err(e) = execute(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
