fn main() {
    std::process::exit(panonav::cli::run(std::env::args_os()));
}
