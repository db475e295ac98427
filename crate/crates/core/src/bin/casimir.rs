use casimir_core::cli;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Ok(v) = std::env::var("CASIMIR_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .expect("thread pool set up once");
            }
            _ => {
                eprintln!("error: CASIMIR_THREADS must be a positive integer, got `{v}`");
                std::process::exit(cli::EXIT_CONFIG);
            }
        }
    }
    let code = cli::run(std::env::args_os(), &mut std::io::stdout().lock());
    std::process::exit(code);
}
