use clap::Parser;

fn main() {
    let args = varflow::cli::Args::parse();
    std::process::exit(varflow::cli::main_with(args));
}
