use clap::Parser;

fn main() {
    let cli = lindblad_diffusion_cli::Cli::parse();
    std::process::exit(lindblad_diffusion_cli::run(cli));
}
