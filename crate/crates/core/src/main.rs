use clap::Parser;

fn main() {
    let cli = match mrmon::cli::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            std::process::exit(if e.use_stderr() { 1 } else { 0 });
        }
    };
    std::process::exit(mrmon::cli::run(cli));
}
