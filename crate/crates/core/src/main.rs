fn main() {
    std::process::exit(lime_lens::harness::cli::run(std::env::args_os()));
}
