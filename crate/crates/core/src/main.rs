fn main() {
    std::process::exit(corrdepth::cli::run(std::env::args_os()));
}
