fn main() {
    std::process::exit(spume::cli::run(std::env::args_os()));
}
