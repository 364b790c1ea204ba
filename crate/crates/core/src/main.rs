fn main() {
    std::process::exit(panel_ident::cli::main_with_args(std::env::args_os()));
}
