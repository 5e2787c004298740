fn main() {
    std::process::exit(urnld::cli::run(std::env::args_os()));
}
