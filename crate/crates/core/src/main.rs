fn main() {
    std::process::exit(mpchorizon::cli::run(std::env::args_os()));
}
