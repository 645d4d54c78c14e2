#include "phonssm/config_file.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace phonssm {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "yes" || v == "1") return true;
    if (v == "false" || v == "no" || v == "0") return false;
    throw std::invalid_argument("config: bad boolean for '" + key + "': " + v);
}

PrototypeCounts parse_counts(const std::string& v) {
    PrototypeCounts c;
    int vals[4];
    std::stringstream ss(v);
    std::string tok;
    for (int i = 0; i < 4; ++i) {
        if (!std::getline(ss, tok, ','))
            throw std::invalid_argument("config: 'Prototype counts' needs 4 values");
        vals[i] = std::stoi(trim(tok));
    }
    c.hand = vals[0];
    c.loc = vals[1];
    c.mov = vals[2];
    c.ori = vals[3];
    return c;
}

}  // namespace

FullConfig parse_config_text(const std::string& text) {
    FullConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw std::invalid_argument("config: malformed section at line " +
                                            std::to_string(lineno));
            section = line.substr(1, line.size() - 2);
            continue;
        }
        const auto colon = line.find(':');
        if (colon == std::string::npos)
            throw std::invalid_argument("config: expected 'Key: value' at line " +
                                        std::to_string(lineno));
        const std::string key = trim(line.substr(0, colon));
        const std::string val = trim(line.substr(colon + 1));

        ModelConfig& m = cfg.model;
        TrainConfig& t = cfg.train;
        if (key == "Model dimension D") m.d = std::stoi(val);
        else if (key == "Component dimension D_c") m.dc = std::stoi(val);
        else if (key == "GAT heads") m.gat_heads = std::stoi(val);
        else if (key == "GAT layers") m.gat_layers = std::stoi(val);
        else if (key == "SSM layers") m.ssm_layers = std::stoi(val);
        else if (key == "SSM state dimension") m.ds = std::stoi(val);
        else if (key == "SSM expansion factor") m.expansion = std::stoi(val);
        else if (key == "Dropout") m.dropout = std::stod(val);
        else if (key == "Temperature tau") m.tau = std::stod(val);
        else if (key == "Prototype counts") m.counts = parse_counts(val);
        else if (key == "Conv kernel") m.conv_kernel = std::stoi(val);
        else if (key == "Vocabulary size K") m.k = std::stoi(val);
        else if (key == "Frames T") m.t = std::stoi(val);
        else if (key == "Without PDM") m.without_pdm = parse_bool(val, key);
        else if (key == "Layout") {
            if (val == "DominantHand21") m.layout = LandmarkLayout::dominant_hand21();
            else if (val == "PoseHands75") m.layout = LandmarkLayout::pose_hands75();
            else throw std::invalid_argument("config: unknown layout '" + val + "'");
        }
        else if (key == "Optimizer") {
            if (val != "AdamW")
                throw std::invalid_argument("config: only the AdamW optimizer is supported");
        }
        else if (key == "LR schedule") {
            if (val != "Cosine decay")
                throw std::invalid_argument("config: only 'Cosine decay' is supported");
        }
        else if (key == "Learning rate") t.lr = std::stod(val);
        else if (key == "Weight decay") t.weight_decay = std::stod(val);
        else if (key == "Batch size") t.batch = std::stoi(val);
        else if (key == "Epochs") t.epochs = std::stoi(val);
        else if (key == "Warmup epochs") t.warmup_epochs = std::stoi(val);
        else if (key == "Label smoothing") m.label_smoothing = std::stod(val);
        else if (key == "Seed") t.seed = std::stoull(val);
        else if (key == "Threads") t.threads = std::stoi(val);
        else if (key == "Validation fraction") t.val_fraction = std::stod(val);
        else if (key == "Augment") t.augment = parse_bool(val, key);
        else if (key == "lambda_ortho" || key == "λ_ortho") m.lambda_ortho = std::stod(val);
        else if (key == "lambda_div" || key == "λ_div") m.lambda_div = std::stod(val);
        else
            throw std::invalid_argument("config: unknown key '" + key + "' at line " +
                                        std::to_string(lineno));
    }
    return cfg;
}

FullConfig parse_config_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("config: cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str());
}

std::string render_config(const FullConfig& cfg) {
    const ModelConfig& m = cfg.model;
    const TrainConfig& t = cfg.train;
    std::ostringstream os;
    os << "[architecture]\n";
    os << "Model dimension D: " << m.d << '\n';
    os << "Component dimension D_c: " << m.dc << '\n';
    os << "GAT heads: " << m.gat_heads << '\n';
    os << "GAT layers: " << m.gat_layers << '\n';
    os << "SSM layers: " << m.ssm_layers << '\n';
    os << "SSM state dimension: " << m.ds << '\n';
    os << "SSM expansion factor: " << m.expansion << '\n';
    os << "Dropout: " << m.dropout << '\n';
    os << "Temperature tau: " << m.tau << '\n';
    os << "Prototype counts: " << m.counts.hand << ',' << m.counts.loc << ',' << m.counts.mov
       << ',' << m.counts.ori << '\n';
    os << "Conv kernel: " << m.conv_kernel << '\n';
    os << "Vocabulary size K: " << m.k << '\n';
    os << "Frames T: " << m.t << '\n';
    os << "Layout: "
       << (m.layout.kind == LayoutKind::DominantHand21 ? "DominantHand21" : "PoseHands75")
       << '\n';
    os << "Without PDM: " << (m.without_pdm ? "true" : "false") << '\n';
    os << '\n';
    os << "[training]\n";
    os << "Optimizer: AdamW\n";
    os << "Learning rate: " << t.lr << '\n';
    os << "Weight decay: " << t.weight_decay << '\n';
    os << "Batch size: " << t.batch << '\n';
    os << "Epochs: " << t.epochs << '\n';
    os << "Warmup epochs: " << t.warmup_epochs << '\n';
    os << "LR schedule: Cosine decay\n";
    os << "Label smoothing: " << m.label_smoothing << '\n';
    os << "Seed: " << t.seed << '\n';
    os << "Threads: " << t.threads << '\n';
    os << "Validation fraction: " << t.val_fraction << '\n';
    os << "Augment: " << (t.augment ? "true" : "false") << '\n';
    os << '\n';
    os << "[loss]\n";
    os << "lambda_ortho: " << m.lambda_ortho << '\n';
    os << "lambda_div: " << m.lambda_div << '\n';
    return os.str();
}

}  // namespace phonssm
