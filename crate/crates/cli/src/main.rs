fn main() {
    std::process::exit(resicomp_cli::run(std::env::args_os()));
}
