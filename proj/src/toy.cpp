#include "phrasemem/toy.hpp"

#include <string>

namespace phrasemem {

ToyProblem gradient_toy(Variant variant, bool with_phrases) {
  ToyProblem toy;
  std::vector<std::string> src, tgt;
  for (int i = 0; i < 16; ++i) {
    src.push_back("s" + std::to_string(i));
    tgt.push_back("t" + std::to_string(i));
  }
  toy.source_vocab = Vocabulary::from_tokens(src);
  toy.target_vocab = Vocabulary::from_tokens(tgt);

  toy.table.add(split_tokens("s1 s2"), split_tokens("t1 t2"));
  toy.table.add(split_tokens("s3"), split_tokens("zeta t3"));  // "zeta" is out of vocabulary
  toy.table.add(split_tokens("s7"), split_tokens("t7 t8"));

  toy.config.variant = variant;
  toy.config.source_vocab = toy.source_vocab.size();
  toy.config.target_vocab = toy.target_vocab.size();
  toy.config.embed_dim = 8;
  toy.config.hidden_dim = 12;
  toy.config.max_phrases = 3;

  const PhraseTable* table = with_phrases ? &toy.table : nullptr;
  toy.examples.push_back(make_example(split_tokens("s0 s1 s2 s7 s4"),
                                      split_tokens("t0 t1 t2 t9 t4"), toy.source_vocab,
                                      toy.target_vocab, table, toy.config.max_phrases));
  toy.examples.push_back(make_example(split_tokens("s5 s3 s6"), split_tokens("t5 zeta t3 t6"),
                                      toy.source_vocab, toy.target_vocab, table,
                                      toy.config.max_phrases));
  return toy;
}

}  // namespace phrasemem
