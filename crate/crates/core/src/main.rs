fn main() {
    std::process::exit(hepnas::cli::run(std::env::args_os()));
}
