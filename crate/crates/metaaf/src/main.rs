fn main() {
    std::process::exit(metaaf::cli::main_with(std::env::args_os()));
}
