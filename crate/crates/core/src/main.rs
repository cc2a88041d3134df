fn main() {
    std::process::exit(sgd_infer::cli::cli_main(std::env::args().collect()));
}
