use clap::Parser;

fn main() {
    let cli = smaug::cli::Cli::parse();
    let code = smaug::cli::run(cli, &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(code);
}
