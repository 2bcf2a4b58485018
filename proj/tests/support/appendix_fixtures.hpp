#pragma once

#include <cstddef>
#include <vector>

namespace cyclegen::testing {

// Triple sets listed in the appendix error-analysis tables, written out in
// linearized form together with their triple count.
struct Fixture {
  const char* text;
  std::size_t triples;
};

const std::vector<Fixture>& appendix_fixtures() {
  static const std::vector<Fixture> f = {
      {"[S] Liselotte Grschebina [P] birthplace [O] Karlsruhe [S] Liselotte Grschebina [P] nationality [O] Israel "
       "[S] Liselotte Grschebina [P] training [O] Schoolof Applied Arts in Stuttgart [S] Karlsruhe [P] country "
       "[O] Germany [S] Israel [P] language [O] Modern Hebrew",
       5},
      {"[S] Mexico [P] currency [O] Mexican peso [S] Mexico [P] demonym [O] Mexicans [S] Bionico [P] course "
       "[O] Dessert [S] Bionico [P] ingredient [O] Raisin [S] Bionico [P] country [O] Mexico",
       5},
      {"[S] Alan B. Miller Hall [P] address [O] 101 Ukrop Way [S] Alan B. Miller Hall [P] height [O] 36.5 meters", 2},
      {"[S] ALCO RS-3 [P] build date [O] May 1950 - August 1956 [S] ALCO RS-3 [P] power type [O] Diesel-electric "
       "transmission [S] ALCO RS-3 [P] builder [O] Montreal Locomotive Works [S] ALCO RS-3 [P] length [O] 17068.8",
       4},
      {"[S] Liselotte Grschebina [P] death place [O] Israel [S] Liselotte Grschebina [P] death place [O] Petah Tikva "
       "[S] Israel [P] population density [O] 387.63 [S] Israel [P] long name [O] State of Israel "
       "[S] Liselotte Grschebina [P] nationality [O] Israel",
       5},
      {"[S] Liselotte Grschebina [P] birth place [O] Karlsruhe [S] Liselotte Grschebina [P] nationality [O] Israel "
       "[S] Liselotte Grschebina [P] training [O] School of Applied Arts in Stuttgart [S] Karlsruhe [P] country "
       "[O] Germany [S] Israel [P] language [O] Modern Hebrew",
       5},
      {"[S] Liselotte Grschebina [P] death place [O] Israel [S] Liselotte Grschebina [P] death place [O] Petah Tikva",
       2},
      {"[S] Alan B. Miller Hall [P] architect [O] Robert A. M. Stern [S] Alan B. Miller Hall [P] address "
       "[O] 101 Ukrop Way [S] Alan B. Miller Hall [P] current tenants [O] Mason School of Business "
       "[S] Alan B. Miller Hall [P] completion date [O] 2009-06-01 [S] Alan B. Miller Hall [P] location [O] Virginia",
       5},
      {"[S] Bootleg Series Volume 1: The Quine Tapes [P] producer [O] The Velvet Underground "
       "[S] Bootleg Series Volume 1: The Quine Tapes [P] genre [O] Rock music [S] The Velvet Underground "
       "[P] genre [O] Proto-punk",
       3},
      {"[S] The Vaults [P] eat type [O] restaurant [S] The Vaults [P] food [O] French [S] The Vaults [P] pricerange "
       "[O] moderate [S] The Vaults [P] area [O] riverside [S] The Vaults [P] family friendly [O] yes "
       "[S] The Vaults [P] near [O] Raja Indian Cuisine",
       6},
      {"[S] K-2 1000 m [P] silver [O] Bulgaria Berenike Faldum Daniela Nedeva [S] K-2 1000 m [P] gold [O] Germany "
       "Anne Knorr Debora Niche [S] K-2 1000 m [P] bronze [O] Hungary Aliz Sarudi Erika Medveczky",
       3},
      {"[S] Illinois 2 [P] result [O] Lost re-election Republican gain [S] Barratt O'Hara [P] first elected [O] 1948 "
       "[S] Illinois 2 [P] candidates [O] Richard B. Vail R 53.6% Barratt O'Hara D 46.4% [S] Illinois 2 "
       "[P] incumbent [O] Barratt O'Hara [S] Barratt O'Hara [P] party [O] Democratic",
       5},
      {"[S] Clowns [P] eat type [O] pub [S] Clowns [P] price range [O] more than \xC2\xA3"
       "30 [S] Clowns [P] customer rating [O] 3 out of 5 [S] Clowns [P] near [O] All Bar One",
       4},
  };
  return f;
}

}  // namespace cyclegen::testing
