fn main() {
    std::process::exit(pnpgrid::cli::main_with_args(std::env::args_os()));
}
