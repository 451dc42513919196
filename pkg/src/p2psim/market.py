"""SDR pricing and double-auction clearing for the community market.

Internal prices follow the supply-demand-ratio method: a single (ISP, IBP)
pair per clearing step, bounded by the grid feed-in and retail prices.
Matching is price-priority with quantity splitting; trades execute at the
uniform community prices, residuals settle against the grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum


class Side(Enum):
    BUY = "buy"
    SELL = "sell"


@dataclass(frozen=True)
class Order:
    agent_id: str
    side: Side
    quantity: float  # kWh
    price: float     # currency/kWh

    def __post_init__(self):
        if self.quantity <= 0:
            raise ValueError(f"order quantity must be positive, got {self.quantity}")
        if self.price < 0:
            raise ValueError(f"order price must be nonnegative, got {self.price}")


@dataclass(frozen=True)
class PriceSignal:
    isp: float
    ibp: float
    sdr: float
    lambda_buy: float
    lambda_sell: float


@dataclass(frozen=True)
class Trade:
    buyer_id: str
    seller_id: str
    quantity: float
    buyer_price: float   # IBP
    seller_price: float  # ISP


@dataclass
class Settlement:
    trades: list[Trade] = field(default_factory=list)
    grid_purchases: dict[str, float] = field(default_factory=dict)  # kWh at lambda_buy
    grid_sales: dict[str, float] = field(default_factory=dict)      # kWh at lambda_sell
    cash_flows: dict[str, float] = field(default_factory=dict)      # + = receives
    operator_spread: float = 0.0


def compute_sdr(total_supply: float, total_demand: float) -> float:
    """Supply / demand; both zero -> 1 (degenerate, nothing to trade)."""
    if total_supply < 0 or total_demand < 0:
        raise ValueError("supply and demand must be nonnegative")
    if total_demand == 0:
        return 1.0 if total_supply == 0 else float("inf")
    return total_supply / total_demand


def internal_prices(sdr: float, lambda_buy: float, lambda_sell: float) -> PriceSignal:
    """ISP/IBP from the SDR.

    On [0, 1]: ISP = ls*lb / ((lb - ls)*sdr + ls), IBP = ISP*sdr + lb*(1-sdr).
    Above 1 (supply saturated) both collapse to the feed-in price.
    """
    if not 0 < lambda_sell < lambda_buy:
        raise ValueError(
            f"need 0 < lambda_sell < lambda_buy, got ({lambda_sell}, {lambda_buy})")
    if sdr < 0:
        raise ValueError(f"sdr must be nonnegative, got {sdr}")
    if sdr > 1.0:
        isp = ibp = lambda_sell
    else:
        isp = lambda_sell * lambda_buy / ((lambda_buy - lambda_sell) * sdr + lambda_sell)
        ibp = isp * sdr + lambda_buy * (1.0 - sdr)
    return PriceSignal(isp=isp, ibp=ibp, sdr=sdr,
                       lambda_buy=lambda_buy, lambda_sell=lambda_sell)


def _buy_key(o: Order):
    return (-o.price, -o.quantity, o.agent_id)


def _sell_key(o: Order):
    return (o.price, -o.quantity, o.agent_id)


def clear_double_auction(buy_book: list[Order], sell_book: list[Order],
                         prices: PriceSignal,
                         ) -> tuple[list[Trade], list[Order], list[Order]]:
    """Match crossing orders; returns (trades, residual buys, residual sells).

    Books are price-sorted (bids descending, asks ascending; ties by larger
    quantity then agent id).  A bid may match any ask priced at or below
    it; the most constrained bids (lowest crossing price) consume the
    cheapest asks first, which maximizes the total matched volume.  Every
    trade executes at buyer_price = IBP and seller_price = ISP; in normal
    operation all bids carry IBP and all asks ISP, so the whole crossing
    volume clears.  No residual bid can cross a residual ask afterwards.
    """
    bids = sorted(buy_book, key=_buy_key)
    asks = sorted(sell_book, key=_sell_key)
    bid_left = [o.quantity for o in bids]
    ask_left = [o.quantity for o in asks]
    trades: list[Trade] = []
    # Lowest-priced (most constrained) bid first; stable sort keeps book
    # priority among equal-priced bids.
    for i in sorted(range(len(bids)), key=lambda k: bids[k].price):
        for j in range(len(asks)):
            if asks[j].price > bids[i].price or bid_left[i] <= 1e-12:
                break
            if ask_left[j] <= 1e-12:
                continue
            q = min(bid_left[i], ask_left[j])
            trades.append(Trade(buyer_id=bids[i].agent_id,
                                seller_id=asks[j].agent_id, quantity=q,
                                buyer_price=prices.ibp, seller_price=prices.isp))
            bid_left[i] -= q
            ask_left[j] -= q
    # Report trades in bid-priority order for stable logs.
    trades.reverse()
    residual_buys = [Order(o.agent_id, Side.BUY, left, o.price)
                     for o, left in zip(bids, bid_left) if left > 1e-12]
    residual_sells = [Order(o.agent_id, Side.SELL, left, o.price)
                      for o, left in zip(asks, ask_left) if left > 1e-12]
    return trades, residual_buys, residual_sells


def settle(trades: list[Trade], residual_buys: list[Order],
           residual_sells: list[Order], prices: PriceSignal) -> Settlement:
    """Aggregate cash flows; residuals trade with the grid at retail/feed-in."""
    s = Settlement(trades=list(trades))

    def add_cash(agent: str, amount: float):
        s.cash_flows[agent] = s.cash_flows.get(agent, 0.0) + amount

    for t in trades:
        add_cash(t.buyer_id, -t.quantity * t.buyer_price)
        add_cash(t.seller_id, t.quantity * t.seller_price)
        s.operator_spread += t.quantity * (t.buyer_price - t.seller_price)
    for o in residual_buys:
        s.grid_purchases[o.agent_id] = s.grid_purchases.get(o.agent_id, 0.0) + o.quantity
        add_cash(o.agent_id, -o.quantity * prices.lambda_buy)
    for o in residual_sells:
        s.grid_sales[o.agent_id] = s.grid_sales.get(o.agent_id, 0.0) + o.quantity
        add_cash(o.agent_id, o.quantity * prices.lambda_sell)
    return s
