fn main() {
    std::process::exit(gridtab::cli::run(std::env::args_os()));
}
