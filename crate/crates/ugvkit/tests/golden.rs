mod common;

#[test]
fn golden_files_are_byte_stable() {
    if std::env::var_os("UGVKIT_BLESS").is_some() {
        common::bless();
    }
    if let Err(e) = common::check_golden() {
        panic!("{e}; rerun with UGVKIT_BLESS=1 only if the format change is intended");
    }
}
