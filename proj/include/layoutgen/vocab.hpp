#pragma once

// Closed word-level vocabulary for the synthetic benchmark, plus the image
// token code. Image tokens encode a color family and a shade:
//   id = family * 2 + shade,  family in [0,8), shade in {0,1}
// so V_img = 16. Solid regions use shade 0; striped regions alternate
// shades by row. Color metrics compare families, so both shades of a
// family count as that color.

#include <array>
#include <string>
#include <unordered_map>
#include <vector>

#include "layoutgen/common.hpp"

namespace layoutgen {

inline const std::vector<std::string>& color_words() {
    static const std::vector<std::string> w = {"red",    "green",  "blue", "yellow",
                                               "orange", "purple", "teal", "gray"};
    return w;
}

inline const std::vector<std::string>& texture_words() {
    static const std::vector<std::string> w = {"solid", "striped"};
    return w;
}

inline const std::vector<std::string>& shape_words() {
    static const std::vector<std::string> w = {"square", "disc"};
    return w;
}

inline const std::vector<std::string>& count_words() {
    static const std::vector<std::string> w = {"one", "two",   "three", "four",
                                               "five", "six", "seven", "eight"};
    return w;
}

constexpr int kNumColorFamilies = 8;
constexpr int kImageVocab = 16;  // 8 families x 2 shades
constexpr int kImageMaskToken = kImageVocab;  // embedding row for [MASK]

inline int image_token(int family, int shade) { return family * 2 + shade; }
inline int family_of(int image_tok) { return image_tok / 2; }
inline int shade_of(int image_tok) { return image_tok % 2; }

class Vocabulary {
public:
    static constexpr const char* kPad = "[PAD]";
    static constexpr const char* kMask = "[MASK]";
    static constexpr const char* kNullPrompt = "[NULL]";

    Vocabulary() {
        // Special ids first so they are stable regardless of word list edits.
        add(kPad);
        add(kMask);
        add(kNullPrompt);
        for (const auto& w : color_words()) add(w);
        for (const auto& w : texture_words()) add(w);
        for (const auto& w : shape_words()) add(w);
        for (const auto& w : count_words()) add(w);
        for (const char* w : {"background", "with", "objects", "object", "scene", "grid"})
            add(w);
    }

    int size() const { return int(words_.size()); }
    int pad_id() const { return 0; }
    int mask_id() const { return 1; }
    int null_prompt_id() const { return 2; }

    bool contains(const std::string& w) const { return ids_.count(w) > 0; }

    int id(const std::string& w) const {
        auto it = ids_.find(w);
        LG_CHECK(it != ids_.end(), "unknown word \"" << w << "\"");
        return it->second;
    }

    const std::string& word(int id) const {
        LG_CHECK(id >= 0 && id < size(), "word id " << id << " outside vocabulary of " << size());
        return words_[size_t(id)];
    }

    // One id per word, padded/truncated to `budget` with [PAD].
    std::vector<int> encode(const std::vector<std::string>& words, int budget) const {
        std::vector<int> out(static_cast<size_t>(budget), pad_id());
        const int n = std::min(budget, int(words.size()));
        for (int i = 0; i < n; ++i) out[size_t(i)] = id(words[size_t(i)]);
        return out;
    }

    std::vector<std::string> decode(const std::vector<int>& ids) const {
        std::vector<std::string> out;
        for (int i : ids) {
            if (i == pad_id()) continue;
            out.push_back(word(i));
        }
        return out;
    }

    int color_family(const std::string& color_word) const {
        for (int i = 0; i < int(color_words().size()); ++i)
            if (color_words()[size_t(i)] == color_word) return i;
        LG_CHECK(false, "\"" << color_word << "\" is not a color word");
        return -1;
    }

private:
    void add(const std::string& w) {
        ids_[w] = int(words_.size());
        words_.push_back(w);
    }

    std::vector<std::string> words_;
    std::unordered_map<std::string, int> ids_;
};

inline const Vocabulary& vocab() {
    static const Vocabulary v;
    return v;
}

}  // namespace layoutgen
