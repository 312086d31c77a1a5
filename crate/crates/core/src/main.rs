fn main() {
    std::process::exit(neuroquant::cli::run(std::env::args_os()));
}
