#include "dmtv/pilot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "dmtv/io_util.hpp"
#include "dmtv/motionfeat.hpp"
#include "dmtv/synthdata.hpp"

namespace dmtv {

namespace {

constexpr uint64_t kStreamContexts = 0x63747874;

std::string placeholder(const std::string& name) { return "[" + name + "]"; }

}  // namespace

int PosGrammar::slot_index(const std::string& name) const {
    for (size_t i = 0; i < slots.size(); ++i)
        if (slots[i].name == name) return static_cast<int>(i);
    return -1;
}

int64_t PosGrammar::prompt_count() const {
    int64_t n = 1;
    for (const auto& s : slots) n *= static_cast<int64_t>(s.words.size());
    return n;
}

void validate_grammar(const PosGrammar& g) {
    if (g.slots.empty()) throw std::invalid_argument("grammar: no slots");
    for (size_t i = 0; i < g.slots.size(); ++i) {
        const auto& s = g.slots[i];
        if (s.name.empty() || s.words.empty())
            throw std::invalid_argument("grammar: slot without a name or words");
        for (size_t j = 0; j < i; ++j)
            if (g.slots[j].name == s.name)
                throw std::invalid_argument("grammar: duplicate slot " + s.name);
        const std::string ph = placeholder(s.name);
        const auto first = g.template_text.find(ph);
        if (first == std::string::npos)
            throw std::invalid_argument("grammar: template lacks " + ph);
        if (g.template_text.find(ph, first + 1) != std::string::npos)
            throw std::invalid_argument("grammar: template repeats " + ph);
    }
}

std::string render_prompt(const PosGrammar& g, const std::vector<int64_t>& choice) {
    if (choice.size() != g.slots.size())
        throw std::invalid_argument("render_prompt: need one word index per slot");
    std::string out = g.template_text;
    for (size_t i = 0; i < g.slots.size(); ++i) {
        const auto& s = g.slots[i];
        if (choice[i] < 0 || choice[i] >= static_cast<int64_t>(s.words.size()))
            throw std::out_of_range("render_prompt: word index outside slot " + s.name);
        const std::string ph = placeholder(s.name);
        const auto at = out.find(ph);
        if (at == std::string::npos)
            throw std::invalid_argument("render_prompt: template lacks " + ph);
        out.replace(at, ph.size(), s.words[static_cast<size_t>(choice[i])]);
    }
    return out;
}

PosGrammar probe_grammar() {
    PosGrammar g;
    g.template_text = "a [ADJ] [NOUN1] [VERB] [ADV] [ADP] the [NOUN2]";
    g.slots = {
        {"ADJ", {"big", "small", "tall", "short", "fat", "thin", "young", "old"}},
        {"NOUN1", {"cat", "dog", "horse", "child", "man", "woman", "bird", "fish"}},
        {"VERB", {"walk", "run", "jump", "crawl", "eat", "swim", "fly", "climb"}},
        {"ADV",
         {"quickly", "slowly", "suddenly", "steadily", "cautiously", "briskly", "gracefully",
          "clumsily"}},
        {"ADP", {"across", "over", "through", "beside", "against", "under", "above", "near"}},
        {"NOUN2", {"river", "bridge", "mountain", "tree", "house", "lake", "field", "forest"}},
    };
    return g;
}

PosGrammar corpus_grammar() {
    PosGrammar g;
    g.template_text =
        "a [SIZE] [COLOR] [SHAPE] [MOTION] [SPEED] toward the [DIRECTION] on the "
        "[BACKGROUND] background";
    g.slots = {
        {"SIZE", {word(Size::big), word(Size::small)}},
        {"COLOR",
         {word(Color::red), word(Color::green), word(Color::blue), word(Color::yellow)}},
        {"SHAPE",
         {word(Shape::circle), word(Shape::square), word(Shape::triangle), word(Shape::star)}},
        {"MOTION",
         {word(Motion::moves), word(Motion::slides), word(Motion::bounces),
          word(Motion::drifts)}},
        {"SPEED", {word(Speed::slowly), word(Speed::quickly)}},
        {"DIRECTION",
         {word(Direction::left), word(Direction::right), word(Direction::up),
          word(Direction::down)}},
        {"BACKGROUND", {word(Background::plain), word(Background::striped)}},
    };
    return g;
}

std::vector<std::string> motion_slots(const PosGrammar& g) {
    std::vector<std::string> out;
    for (const auto& s : g.slots)
        if (s.name == "VERB" || s.name == "ADV" || s.name == "ADP" || s.name == "MOTION" ||
            s.name == "SPEED" || s.name == "DIRECTION")
            out.push_back(s.name);
    return out;
}

std::vector<std::string> content_slots(const PosGrammar& g) {
    const auto motion = motion_slots(g);
    std::vector<std::string> out;
    for (const auto& s : g.slots)
        if (std::find(motion.begin(), motion.end(), s.name) == motion.end())
            out.push_back(s.name);
    return out;
}

std::vector<PromptGroup> enumerate_groups(const PosGrammar& grammar, const std::string& slot,
                                          int64_t n_contexts, uint64_t seed) {
    validate_grammar(grammar);
    const int target = grammar.slot_index(slot);
    if (target < 0) throw std::invalid_argument("enumerate_groups: unknown slot " + slot);
    if (n_contexts < 1)
        throw std::invalid_argument("enumerate_groups: need at least one context");

    std::vector<int> others;
    int64_t total = 1;
    for (int i = 0; i < static_cast<int>(grammar.slots.size()); ++i)
        if (i != target) {
            others.push_back(i);
            total *= static_cast<int64_t>(grammar.slots[i].words.size());
        }
    if (n_contexts > total)
        throw std::invalid_argument("enumerate_groups: " + std::to_string(n_contexts) +
                                    " contexts requested but only " + std::to_string(total) +
                                    " exist");

    // partial shuffle of the context ids: first n_contexts entries are a
    // uniform draw without replacement
    std::vector<int64_t> ids(static_cast<size_t>(total));
    std::iota(ids.begin(), ids.end(), 0);
    Rng rng = Rng::from_stream(seed, kStreamContexts, static_cast<uint64_t>(target));
    for (int64_t i = 0; i < n_contexts; ++i) {
        const int64_t j =
            i + static_cast<int64_t>(rng.uniform_index(static_cast<uint64_t>(total - i)));
        std::swap(ids[static_cast<size_t>(i)], ids[static_cast<size_t>(j)]);
    }

    std::vector<PromptGroup> groups;
    groups.reserve(static_cast<size_t>(n_contexts));
    std::vector<int64_t> choice(grammar.slots.size(), 0);
    const auto& words = grammar.slots[static_cast<size_t>(target)].words;
    for (int64_t c = 0; c < n_contexts; ++c) {
        // decode the mixed-radix context id into the non-target slots
        int64_t rem = ids[static_cast<size_t>(c)];
        for (auto it = others.rbegin(); it != others.rend(); ++it) {
            const int64_t n = static_cast<int64_t>(grammar.slots[static_cast<size_t>(*it)].words.size());
            choice[static_cast<size_t>(*it)] = rem % n;
            rem /= n;
        }
        PromptGroup grp;
        grp.prompts.reserve(words.size());
        for (size_t wi = 0; wi < words.size(); ++wi) {
            choice[static_cast<size_t>(target)] = static_cast<int64_t>(wi);
            grp.prompts.push_back(render_prompt(grammar, choice));
        }
        groups.push_back(std::move(grp));
    }
    return groups;
}

double embedding_sensitivity(const Tensor& rows) {
    if (rows.ndim() != 2)
        throw std::invalid_argument("embedding_sensitivity: rows must be [N, d]");
    const int64_t n = rows.shape(0), d = rows.shape(1);
    if (n < 2) throw std::invalid_argument("embedding_sensitivity: need at least two rows");

    std::vector<double> a(static_cast<size_t>(d)), b(static_cast<size_t>(d));
    double sum = 0.0;
    int64_t pairs = 0;
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = i + 1; j < n; ++j) {
            std::copy_n(rows.data() + i * d, d, a.begin());
            std::copy_n(rows.data() + j * d, d, b.begin());
            sum += safe_cosine_flat(a, b);
            ++pairs;
        }
    double sens = 1.0 - sum / static_cast<double>(pairs);
    if (sens < 0.0 && sens > -1e-6) sens = 0.0;
    if (sens > 1.0 && sens < 1.0 + 1e-6) sens = 1.0;
    return sens;
}

double group_sensitivity(const PromptGroup& group, const TextEncoder& encoder,
                         const Vocab& vocab) {
    if (group.prompts.size() < 2)
        throw std::invalid_argument("group_sensitivity: need at least two prompts");
    std::vector<TokenSequence> batch;
    batch.reserve(group.prompts.size());
    for (const auto& p : group.prompts)
        batch.push_back(tokenize(vocab, p, encoder.config().seq_len));
    return embedding_sensitivity(encoder.encode_pooled(batch));
}

SensitivityReport run_pilot(const PosGrammar& grammar, const TextEncoder& encoder,
                            const Vocab& vocab, const PilotOptions& opts) {
    validate_grammar(grammar);
    if (!opts.slot_filter.empty() && grammar.slot_index(opts.slot_filter) < 0)
        throw std::invalid_argument("run_pilot: unknown slot " + opts.slot_filter);

    SensitivityReport report;
    std::string tag = encoder.prefix();
    if (!tag.empty() && tag.back() == '.') tag.pop_back();
    report.encoder_tag = tag.empty() ? "encoder" : tag;
    report.seed = opts.seed;
    report.n_contexts = opts.n_contexts;

    for (const auto& slot : grammar.slots) {
        if (!opts.slot_filter.empty() && slot.name != opts.slot_filter) continue;
        const auto groups = enumerate_groups(grammar, slot.name, opts.n_contexts, opts.seed);
        std::vector<double> sens;
        sens.reserve(groups.size());
        for (const auto& g : groups) sens.push_back(group_sensitivity(g, encoder, vocab));
        const double mean =
            std::accumulate(sens.begin(), sens.end(), 0.0) / static_cast<double>(sens.size());
        double var = 0.0;
        for (double s : sens) var += (s - mean) * (s - mean);
        var /= static_cast<double>(sens.size());
        report.slots.push_back({slot.name, mean, static_cast<int64_t>(groups.size()), var});
    }
    return report;
}

double mean_slot_sensitivity(const SensitivityReport& r, const std::vector<std::string>& slots) {
    if (slots.empty()) throw std::invalid_argument("mean_slot_sensitivity: no slots named");
    double sum = 0.0;
    for (const auto& name : slots) {
        const SlotSensitivity* hit = nullptr;
        for (const auto& s : r.slots)
            if (s.slot == name) {
                hit = &s;
                break;
            }
        if (!hit)
            throw std::invalid_argument("mean_slot_sensitivity: report lacks slot " + name);
        sum += hit->sensitivity;
    }
    return sum / static_cast<double>(slots.size());
}

void write_sensitivity_csv(const std::string& path, const SensitivityReport& report) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_sensitivity_csv: cannot open " + path);
    os << "encoder,seed,contexts,slot,sensitivity,groups,similarity_variance\n";
    for (const auto& s : report.slots)
        os << report.encoder_tag << ',' << report.seed << ',' << report.n_contexts << ','
           << s.slot << ',' << format_double(s.sensitivity) << ',' << s.groups << ','
           << format_double(s.similarity_variance) << '\n';
    if (!os) throw std::runtime_error("write_sensitivity_csv: write failed for " + path);
}

void write_sensitivity_chart(const std::string& path,
                             const std::vector<SensitivityReport>& reports) {
    if (reports.empty())
        throw std::invalid_argument("write_sensitivity_chart: no reports");
    std::vector<std::string> slots;
    slots.reserve(reports.front().slots.size());
    for (const auto& s : reports.front().slots) slots.push_back(s.slot);

    std::vector<std::string> series;
    series.reserve(reports.size());
    std::vector<std::vector<double>> values(slots.size(),
                                            std::vector<double>(reports.size(), 0.0));
    for (size_t r = 0; r < reports.size(); ++r) {
        const auto& rep = reports[r];
        series.push_back(rep.encoder_tag);
        if (rep.slots.size() != slots.size())
            throw std::invalid_argument("write_sensitivity_chart: reports cover different slots");
        for (size_t i = 0; i < rep.slots.size(); ++i) {
            if (rep.slots[i].slot != slots[i])
                throw std::invalid_argument(
                    "write_sensitivity_chart: reports cover different slots");
            values[i][r] = rep.slots[i].sensitivity;
        }
    }
    write_bar_chart_bmp(path, slots, series, values);
}

}  // namespace dmtv
