fn main() {
    std::process::exit(ddfem::cli::run(std::env::args_os()));
}
