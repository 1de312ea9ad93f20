fn main() {
    std::process::exit(obalex::cli::run(std::env::args_os()));
}
