fn main() {
    std::process::exit(minn::cli::run(std::env::args_os()));
}
