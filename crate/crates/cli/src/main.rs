use clap::Parser;

fn main() {
    let cli = ergl_cli::Cli::parse();
    if let Err(e) = ergl_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
