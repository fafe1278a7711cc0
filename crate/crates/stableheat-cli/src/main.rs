use clap::Parser;

#[derive(Parser)]
#[command(name = "stableheat", version, about = "Heat kernels of stable-like nonlocal operators")]
struct Cli {}

fn main() {
    let _cli = Cli::parse();
}
