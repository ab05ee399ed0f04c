fn main() {
    templex_cli::run()
}
