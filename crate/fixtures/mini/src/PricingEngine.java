/**
 * Computes line and cart subtotals from catalog prices.
 */
public class PricingEngine {
    private Catalog catalog;

    public PricingEngine(Catalog catalog) {
        this.catalog = catalog;
    }

    /** Sum of line totals over every item in the cart. */
    public double subtotal(Cart cart) {
        double total = 0.0;
        java.util.Iterator it = cart.skus();
        while (it.hasNext()) {
            String sku = (String) it.next();
            total += catalog.priceOf(sku);
        }
        return round2(total);
    }

    /** Price of one line: unit price times quantity. */
    public double lineTotal(String sku, int quantity) {
        return round2(catalog.priceOf(sku) * quantity);
    }

    /** Rounds to cents, half up. */
    public double round2(double amount) {
        return Math.round(amount * 100.0) / 100.0;
    }
}
