fn main() {
    std::process::exit(aldi_is_cli::cli_main());
}
