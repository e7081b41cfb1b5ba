use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use soaguard_core::monitor::BanEntry;
use soaguard_core::policy::{compile_tbm, parse_srm, parse_tbm, RouteSelection};
use soaguard_core::{load_model, Blacklist, ConsumerId, ConsumerKey, KeyHash, SoaModel};

use crate::CliError;

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn invalid(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Invalid(format!("{}: {e}", path.display()))
}

pub fn read_model(path: &Path) -> Result<SoaModel, CliError> {
    load_model(&read(path)?).map_err(|e| invalid(path, e))
}

/// Validates a model file and describes it, one route per service.
pub fn model_validate(path: &Path) -> Result<String, CliError> {
    let model = read_model(path)?;
    let mut out = format!(
        "{}: {} services, {} transitions, initial {}\n",
        path.display(),
        model.len(),
        model.transition_count(),
        model.initial()
    );
    for (id, kind, uri) in model.services() {
        let route = match model.find_route(id) {
            Ok(r) if r.is_empty() => id.to_string(),
            Ok(r) => r.services().iter().map(|s| s.as_str()).collect::<Vec<_>>().join(" -> "),
            Err(_) => "unreachable".into(),
        };
        writeln!(out, "  {id} {kind} {uri}  route {route}").expect("string write");
    }
    Ok(out)
}

/// Compiles every releasing rule into `<consumer>-<target>.tbm` under `out`.
pub fn tbm_create(
    srm_path: &Path,
    model_path: &Path,
    out: &Path,
    routes: RouteSelection,
) -> Result<Vec<PathBuf>, CliError> {
    let model = read_model(model_path)?;
    let srm = parse_srm(&read(srm_path)?, &model).map_err(|e| invalid(srm_path, e))?;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut written = Vec::new();
    for rule in srm.rules() {
        let tbm = compile_tbm(rule, &model, routes)
            .map_err(|e| invalid(srm_path, format!("rule for {}: {e}", rule.consumer)))?;
        let path = out.join(format!("{}-{}.tbm", rule.consumer, rule.target));
        write(&path, &tbm.to_document())?;
        written.push(path);
    }
    Ok(written)
}

/// Adds the rules of `extra` to the model in `file`; returns how many were new.
/// `extra` may omit the `tbm` header, in which case the rules belong to the
/// file's consumer.
pub fn tbm_append(file: &Path, extra: &Path) -> Result<usize, CliError> {
    let mut tbm = parse_tbm(&read(file)?).map_err(|e| invalid(file, e))?;
    let mut text = read(extra)?;
    let has_header = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .find(|l| !l.is_empty())
        .is_some_and(|l| l.starts_with("tbm"));
    if !has_header {
        text = format!("tbm {}\n{text}", tbm.consumer());
    }
    let more = parse_tbm(&text).map_err(|e| invalid(extra, e))?;
    let added = tbm.append_rules(more.rules()).map_err(|e| invalid(extra, e))?;
    write(file, &tbm.to_document())?;
    Ok(added)
}

/// Canonical listing of a model file, checked against `model` when given.
pub fn tbm_show(file: &Path, model: Option<&Path>) -> Result<String, CliError> {
    let tbm = parse_tbm(&read(file)?).map_err(|e| invalid(file, e))?;
    if let Some(m) = model {
        tbm.validate_against(&read_model(m)?).map_err(|e| invalid(file, e))?;
    }
    Ok(format!("{}# {} rules\n", tbm.to_document(), tbm.len()))
}

/// `salt:digest` for an SRM rule.
pub fn key_hash(secret: &str, salt: Option<&str>) -> Result<String, CliError> {
    let key = ConsumerKey::new(secret.as_bytes().to_vec());
    let hash = match salt {
        None => KeyHash::generate(&key),
        Some(hex_salt) => {
            let bytes = hex::decode(hex_salt)
                .map_err(|e| CliError::Invalid(format!("salt: {e}")))?;
            let salt = bytes
                .try_into()
                .map_err(|_| CliError::Invalid("salt must be 16 bytes".into()))?;
            KeyHash::with_salt(&key, salt)
        }
    };
    Ok(hash.to_string())
}

fn open_store(path: &Path) -> Result<Blacklist, CliError> {
    Blacklist::open(path).map_err(|e| CliError::Runtime(e.to_string()))
}

pub fn blacklist_list(store: &Path) -> Result<Vec<BanEntry>, CliError> {
    Ok(open_store(store)?.entries())
}

pub fn blacklist_remove(store: &Path, consumer: &str) -> Result<BanEntry, CliError> {
    let id = ConsumerId::new(consumer).map_err(|e| CliError::Invalid(e.to_string()))?;
    open_store(store)?.remove(&id).map_err(|e| match e {
        soaguard_core::monitor::BlacklistError::NotFound(_) => CliError::NotFound(e.to_string()),
        other => CliError::Runtime(other.to_string()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MODEL: &str = "\
service S0 system /SBA/0.jsp
service S1 sensitive /SBA/X0.jsp
service S2 system /SBA/1.jsp
service S3 sensitive /SBA/X1.jsp
service S4 sensitive /SBA/X2.jsp
service S5 sensitive /island
transition t1 S0 S1
transition t2 S0 S2
transition t3 S2 S3
transition t4 S2 S4
initial S0
";

    fn fixture(srm: &str) -> (tempfile::TempDir, PathBuf, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("m.model");
        let s = dir.path().join("s.srm");
        std::fs::write(&m, MODEL).unwrap();
        std::fs::write(&s, srm).unwrap();
        (dir, m, s)
    }

    fn rule(c: &str, target: &str, released: &str) -> String {
        let h = key_hash("k", Some("00112233445566778899aabbccddeeff")).unwrap();
        format!("rule {c} {h} {target} -> {released}\n")
    }

    #[test]
    fn creates_one_file_per_rule() {
        let (dir, m, s) = fixture(&(rule("C0", "a", "S1,S3") + &rule("C1", "b", "S1")));
        let out = dir.path().join("out");
        let files = tbm_create(&s, &m, &out, RouteSelection::Shortest).unwrap();
        assert_eq!(files.len(), 2);
        let c1 = std::fs::read_to_string(out.join("C1-b.tbm")).unwrap();
        assert_eq!(c1, "tbm C1 b\nrb /SBA/0.jsp /SBA/0.jsp\nrb /SBA/0.jsp /SBA/X0.jsp\nrb /SBA/X0.jsp /SBA/X0.jsp\n");
    }

    #[test]
    fn empty_srm_and_unreachable_service() {
        let (dir, m, s) = fixture("# nothing released\n");
        assert!(tbm_create(&s, &m, dir.path(), RouteSelection::Shortest).unwrap().is_empty());
        let (dir, m, s) = fixture(&rule("C0", "a", "S5"));
        let err = tbm_create(&s, &m, dir.path(), RouteSelection::Shortest).unwrap_err();
        assert!(err.to_string().contains("unreachable"), "{err}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn append_and_show() {
        let (dir, m, s) = fixture(&rule("C1", "b", "S1"));
        tbm_create(&s, &m, dir.path(), RouteSelection::Shortest).unwrap();
        let file = dir.path().join("C1-b.tbm");
        let extra = dir.path().join("extra");
        std::fs::write(&extra, "rb /SBA/0.jsp /SBA/1.jsp\nrb /SBA/0.jsp /SBA/0.jsp\n").unwrap();
        assert_eq!(tbm_append(&file, &extra).unwrap(), 1);
        assert_eq!(tbm_append(&file, &extra).unwrap(), 0);
        let shown = tbm_show(&file, Some(&m)).unwrap();
        assert!(shown.ends_with("# 4 rules\n"), "{shown}");

        std::fs::write(&extra, "tbm C0\nrb /SBA/0.jsp /SBA/1.jsp\n").unwrap();
        assert!(tbm_append(&file, &extra).unwrap_err().to_string().contains("C0"));
        std::fs::write(&extra, "rb /nowhere /SBA/1.jsp\n").unwrap();
        tbm_append(&file, &extra).unwrap();
        assert!(tbm_show(&file, Some(&m)).is_err());
    }

    #[test]
    fn key_hash_is_salted() {
        let a = key_hash("CK0", Some("01010101010101010101010101010101")).unwrap();
        assert_eq!(a, key_hash("CK0", Some("01010101010101010101010101010101")).unwrap());
        assert_ne!(key_hash("CK0", None).unwrap(), key_hash("CK0", None).unwrap());
        assert!(key_hash("CK0", Some("0101")).is_err());
    }

    #[test]
    fn blacklist_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = dir.path().join("bans");
        assert!(blacklist_list(&store).unwrap().is_empty());
        let err = blacklist_remove(&store, "C9").unwrap_err();
        assert!(matches!(err, CliError::NotFound(_)));
        assert_eq!(err.exit_code(), 1);
    }
}
